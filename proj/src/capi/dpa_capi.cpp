#include "dpa/dpa.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <sstream>
#include <string>

#include "dpa/conversion.hpp"
#include "dpa/eval.hpp"
#include "dpa/feeds.hpp"
#include "dpa/offset.hpp"
#include "dpa/workbench.hpp"

struct dpa_config {
  nlohmann::json json;
  std::uint64_t seed = 1;
  dpa::workbench::RunConfig run;
};

struct dpa_model {
  dpa::offset::ModelState state;
};

namespace {

thread_local std::string g_last_error;

struct NullArgument {
  const char* name;
};

template <class F>
dpa_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return DPA_OK;
  } catch (const NullArgument& n) {
    g_last_error = std::string("argument '") + n.name + "' must not be NULL";
    return DPA_ERR_NULL_ARGUMENT;
  } catch (const dpa::Error& e) {
    g_last_error = e.what();
    return static_cast<dpa_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DPA_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DPA_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return DPA_ERR_INTERNAL;
  }
}

template <class T>
T* need(T* p, const char* name) {
  if (!p) throw NullArgument{name};
  return p;
}

std::string str(const char* s, const char* name) { return need(s, name); }
std::string opt(const char* s) { return s ? s : ""; }

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(const nlohmann::json& j, char** out_json) {
  if (out_json) *out_json = dup(j.dump(2));
}

const dpa::workbench::RunConfig& cfg(const dpa_config* c) { return need(c, "config")->run; }

}  // namespace

extern "C" {

const char* dpa_version(void) { return dpa::workbench::kToolVersion; }

const char* dpa_last_error(void) { return g_last_error.c_str(); }

const char* dpa_status_name(dpa_status status) {
  switch (status) {
    case DPA_OK: return "ok";
    case DPA_ERR_INVALID_SCHEMA: return "invalid-schema";
    case DPA_ERR_INVALID_EVENT: return "invalid-event";
    case DPA_ERR_INCOMPLETE_EVENT: return "incomplete-event";
    case DPA_ERR_INVALID_INPUT: return "invalid-input";
    case DPA_ERR_UNDEFINED_METRIC: return "undefined-metric";
    case DPA_ERR_EMPTY_CURVE: return "empty-curve";
    case DPA_ERR_NOT_SCORABLE: return "not-scorable";
    case DPA_ERR_IO: return "io";
    case DPA_ERR_PARSE: return "parse";
    case DPA_ERR_CONFIG: return "config";
    case DPA_ERR_STAGE_FAILED: return "stage-failed";
    case DPA_ERR_NULL_ARGUMENT: return "null-argument";
    case DPA_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void dpa_string_free(char* s) { std::free(s); }

dpa_status dpa_config_create(const char* path, uint64_t seed, dpa_config** out) {
  return guarded([&] {
    need(out, "out");
    auto c = std::make_unique<dpa_config>();
    c->seed = seed;
    if (path) {
      auto in = dpa::feeds::open_in(path);
      try {
        in >> c->json;
      } catch (const nlohmann::json::exception& e) {
        throw dpa::Error(dpa::ErrorCode::config, std::string(path) + ": " + e.what());
      }
    } else {
      c->json = nlohmann::json::object();
    }
    c->run = dpa::workbench::RunConfig::load(path ? path : "", {}, seed);
    *out = c.release();
  });
}

dpa_status dpa_config_set(dpa_config* config, const char* assignment) {
  return guarded([&] {
    need(config, "config");
    auto j = config->json;
    dpa::workbench::RunConfig::apply_override(j, str(assignment, "assignment"));
    j["seed"] = config->seed;
    if (j.contains("world")) j["world"]["seed"] = config->seed;
    config->run = dpa::workbench::RunConfig::from_json(j);
    config->json = std::move(j);
  });
}

dpa_status dpa_config_json(const dpa_config* config, char** out_json) {
  return guarded([&] { emit(cfg(config).to_json(), need(out_json, "out_json")); });
}

void dpa_config_destroy(dpa_config* config) { delete config; }

dpa_status dpa_derive_dims(size_t features, size_t pair_width, size_t solo_width, size_t* d, size_t* full) {
  return guarded([&] {
    const auto dims = dpa::offset::derive_dims(features, pair_width, solo_width);
    *need(d, "d") = dims.user;
    *need(full, "full") = dims.full;
  });
}

dpa_status dpa_model_load(const char* path, dpa_model** out) {
  return guarded([&] {
    need(out, "out");
    *out = new dpa_model{dpa::offset::load_model_file(str(path, "path"))};
  });
}

dpa_status dpa_model_dims(const dpa_model* model, size_t* d, size_t* full) {
  return guarded([&] {
    const auto& dims = need(model, "model")->state.dims();
    *need(d, "d") = dims.user;
    *need(full, "full") = dims.full;
  });
}

dpa_status dpa_model_predict(const dpa_model* model, const char* event_line, double* out) {
  return guarded([&] {
    need(model, "model");
    std::istringstream in("#events v1\n" + str(event_line, "event_line") + "\n");
    const auto events = dpa::feeds::read_events(in);
    if (events.size() != 1) throw dpa::Error(dpa::ErrorCode::parse, "expected exactly one event");
    *need(out, "out") = dpa::offset::predict(events.front(), model->state);
  });
}

void dpa_model_destroy(dpa_model* model) { delete model; }

dpa_status dpa_auc(const double* scores, const int* labels, size_t n, double* out) {
  return guarded([&] {
    *need(out, "out") = dpa::eval::auc({need(scores, "scores"), n}, {need(labels, "labels"), n});
  });
}

dpa_status dpa_logloss(const double* predictions, const int* labels, size_t n, double* out) {
  return guarded([&] {
    *need(out, "out") = dpa::eval::logloss({need(predictions, "predictions"), n}, {need(labels, "labels"), n});
  });
}

dpa_status dpa_bid_final(double pconv, double tcpa, double bid_pg, double* out) {
  return guarded([&] { *need(out, "out") = dpa::conversion::bid_final(pconv, tcpa, bid_pg); });
}

dpa_status dpa_gen_world(const dpa_config* c, const char* out_dir, char** out_json) {
  return guarded([&] { emit(dpa::workbench::gen_world(cfg(c), str(out_dir, "out_dir")), out_json); });
}

dpa_status dpa_gen_feeds(const dpa_config* c, const char* world_dir, const char* out_dir, char** out_json) {
  return guarded([&] {
    emit(dpa::workbench::gen_feeds(cfg(c), str(world_dir, "world_dir"), str(out_dir, "out_dir")), out_json);
  });
}

dpa_status dpa_train_click(const dpa_config* c, const char* world_dir, const char* feeds_dir, const char* out_dir,
                           char** out_json) {
  return guarded([&] {
    emit(dpa::workbench::train_click(cfg(c), str(world_dir, "world_dir"), str(feeds_dir, "feeds_dir"),
                                     str(out_dir, "out_dir")),
         out_json);
  });
}

dpa_status dpa_train_conv(const dpa_config* c, const char* world_dir, const char* feeds_dir, const char* out_dir,
                          char** out_json) {
  return guarded([&] {
    emit(dpa::workbench::train_conv(cfg(c), str(world_dir, "world_dir"), str(feeds_dir, "feeds_dir"),
                                    str(out_dir, "out_dir")),
         out_json);
  });
}

dpa_status dpa_publish_conv(const dpa_config* c, const char* model_path, const char* stats_path,
                            const char* perf_path, const char* campaigns_path, int64_t k, int64_t min_conv,
                            const char* out_path, char** out_json) {
  return guarded([&] {
    const auto& r = cfg(c);
    emit(dpa::workbench::publish_conv(r, str(model_path, "model_path"), str(stats_path, "stats_path"),
                                      str(perf_path, "perf_path"), str(campaigns_path, "campaigns_path"),
                                      k < 0 ? r.conv.publish_k : k, min_conv < 0 ? r.conv.min_conversions : min_conv,
                                      str(out_path, "out_path")),
         out_json);
  });
}

dpa_status dpa_train_lookalike(const dpa_config* c, const char* world_dir, const char* pixel, const char* impressions,
                               size_t n, size_t m, const char* out_path, char** out_json) {
  return guarded([&] {
    const auto& r = cfg(c);
    emit(dpa::workbench::train_lookalike(r, str(world_dir, "world_dir"), str(pixel, "pixel"),
                                         str(impressions, "impressions"), n ? n : r.lookalike.top_n_products,
                                         m ? m : r.lookalike.negatives_per_product, str(out_path, "out_path")),
         out_json);
  });
}

dpa_status dpa_publish_trendy(const dpa_config* c, const char* world_dir, const char* feeds_dir,
                              const char* lookalike_path, size_t t, double pct, size_t r_sample,
                              const char* out_path, char** out_json) {
  return guarded([&] {
    const auto& r = cfg(c);
    emit(dpa::workbench::publish_trendy(r, str(world_dir, "world_dir"), str(feeds_dir, "feeds_dir"),
                                        str(lookalike_path, "lookalike_path"), t ? t : r.lookalike.publish_t,
                                        pct > 0 ? pct : r.trendy_percentile,
                                        r_sample ? r_sample : r.lookalike.sample_r, str(out_path, "out_path")),
         out_json);
  });
}

dpa_status dpa_threshold_curve(const dpa_config* c, const char* world_dir, const char* feeds_dir,
                               const char* published_path, const char* advertiser, double pct, size_t r_sample,
                               const char* out_prefix, char** out_json) {
  return guarded([&] {
    const auto& r = cfg(c);
    emit(dpa::workbench::threshold_curve(r, str(world_dir, "world_dir"), str(feeds_dir, "feeds_dir"),
                                         str(published_path, "published_path"), str(advertiser, "advertiser"),
                                         pct > 0 ? pct : r.trendy_percentile,
                                         r_sample ? r_sample : r.lookalike.sample_r, str(out_prefix, "out_prefix")),
         out_json);
  });
}

dpa_status dpa_build_snapshots(const dpa_config* c, const char* world_dir, const char* feeds_dir,
                               const char* snapshot_dir, char** out_json) {
  return guarded([&] {
    emit(dpa::workbench::build_snapshots(cfg(c), str(world_dir, "world_dir"), str(feeds_dir, "feeds_dir"),
                                         str(snapshot_dir, "snapshot_dir")),
         out_json);
  });
}

dpa_status dpa_simulate_serve(const dpa_config* c, const char* requests_path, const char* snapshot_dir,
                              const char* out_path, int control, const char* bucket_dir, const char* world_dir,
                              char** out_json) {
  return guarded([&] {
    dpa::workbench::ServeOptions o{control != 0, opt(bucket_dir), opt(world_dir)};
    if (!o.bucket_dir.empty() && o.world_dir.empty()) {
      throw dpa::Error(dpa::ErrorCode::invalid_input, "outcome simulation needs the world directory");
    }
    emit(dpa::workbench::simulate_serve(cfg(c), str(requests_path, "requests_path"),
                                        str(snapshot_dir, "snapshot_dir"), str(out_path, "out_path"), o),
         out_json);
  });
}

dpa_status dpa_eval(const char* model_path, const char* test_path, const char* out_prefix, char** out_json) {
  return guarded([&] {
    emit(dpa::workbench::eval_model(str(model_path, "model_path"), str(test_path, "test_path"), opt(out_prefix)),
         out_json);
  });
}

dpa_status dpa_forward_select(const dpa_config* c, const char* world_dir, const char* feeds_dir,
                              const char* candidates, const char* out_prefix, char** out_json) {
  return guarded([&] {
    const auto& r = cfg(c);
    auto list = opt(candidates).empty() ? r.select_candidates : dpa::split(candidates, ',');
    emit(dpa::workbench::forward_select(r, str(world_dir, "world_dir"), str(feeds_dir, "feeds_dir"), list,
                                        opt(out_prefix)),
         out_json);
  });
}

dpa_status dpa_happiness(const dpa_config* c, const char* mode, double error, const char* test_bucket,
                         const char* control_bucket, const char* out_prefix, char** out_json) {
  return guarded([&] {
    const auto& r = cfg(c);
    const auto m = dpa::eval::parse_happiness_mode(str(mode, "mode"));
    if (error < 0) error = m == dpa::eval::HappinessMode::conv ? r.happiness_error_conv : r.happiness_error_trendy;
    emit(dpa::workbench::happiness(r, m, error, str(test_bucket, "test_bucket"), opt(control_bucket),
                                   opt(out_prefix)),
         out_json);
  });
}

dpa_status dpa_report(const char* test_bucket, const char* control_bucket, const char* out_prefix, char** out_json) {
  return guarded([&] {
    emit(dpa::workbench::report(str(test_bucket, "test_bucket"), str(control_bucket, "control_bucket"),
                                opt(out_prefix)),
         out_json);
  });
}

dpa_status dpa_run(const dpa_config* c, const char* out_dir, char** out_json) {
  return guarded([&] { emit(dpa::workbench::run_pipeline(cfg(c), str(out_dir, "out_dir")), out_json); });
}

}  // extern "C"
