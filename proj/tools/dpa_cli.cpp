// dpa: command-line front end over the C API.

#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpa/dpa.h"

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::string config;
  std::vector<std::string> sets;
};

struct Failure {
  dpa_status status;
};

void check(dpa_status s) {
  if (s != DPA_OK) throw Failure{s};
}

class Config {
 public:
  explicit Config(const Common& c) {
    check(dpa_config_create(c.config.empty() ? nullptr : c.config.c_str(), c.seed, &handle_));
    for (const auto& s : c.sets) check(dpa_config_set(handle_, s.c_str()));
  }
  ~Config() { dpa_config_destroy(handle_); }
  Config(const Config&) = delete;
  Config& operator=(const Config&) = delete;
  const dpa_config* get() const { return handle_; }

 private:
  dpa_config* handle_ = nullptr;
};

const char* c_or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void print(char* json) {
  if (json) {
    std::puts(json);
    dpa_string_free(json);
  }
}

CLI::App* verb(CLI::App& app, const char* name, const char* help, Common& common) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--seed", common.seed, "random seed")->capture_default_str();
  sub->add_option("--config", common.config, "JSON run configuration");
  sub->add_option("--set", common.sets, "override, e.g. --set world.n_users=500")->take_all();
  return sub;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DPA prospecting workbench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dpa_version()));

  Common common;
  std::function<void()> action;
  char* out = nullptr;

  std::string out_path, world_dir, feeds_dir, model, stats, perf, campaigns, pixel, impressions, advertiser;
  std::string requests, snapshots, bucket, test, test_bucket, control_bucket, candidates, mode;
  std::int64_t k = -1, min_conv = -1;
  std::size_t n = 0, m = 0, t = 0, r = 0;
  double pct = 0, error = -1;
  bool control = false;

  auto* gw = verb(app, "gen-world", "generate a synthetic catalog, users and campaigns", common);
  gw->add_option("--out", out_path)->required();
  gw->callback([&] { action = [&] { check(dpa_gen_world(Config(common).get(), out_path.c_str(), &out)); }; });

  auto* gf = verb(app, "gen-feeds", "generate daily impression, conversion, pixel and request feeds", common);
  gf->add_option("--world", world_dir)->required();
  gf->add_option("--out", out_path)->required();
  gf->callback([&] {
    action = [&] { check(dpa_gen_feeds(Config(common).get(), world_dir.c_str(), out_path.c_str(), &out)); };
  });

  auto* tc = verb(app, "train-click", "train the click model", common);
  tc->add_option("--world", world_dir)->required();
  tc->add_option("--feeds", feeds_dir)->required();
  tc->add_option("--out", out_path)->required();
  tc->callback([&] {
    action = [&] {
      check(dpa_train_click(Config(common).get(), world_dir.c_str(), feeds_dir.c_str(), out_path.c_str(), &out));
    };
  });

  auto* tv = verb(app, "train-conv", "train the conversion model", common);
  tv->add_option("--world", world_dir)->required();
  tv->add_option("--feeds", feeds_dir)->required();
  tv->add_option("--out", out_path)->required();
  tv->callback([&] {
    action = [&] {
      check(dpa_train_conv(Config(common).get(), world_dir.c_str(), feeds_dir.c_str(), out_path.c_str(), &out));
    };
  });

  auto* pc = verb(app, "publish-conv", "publish the conversion-prospecting product list", common);
  pc->add_option("--model", model)->required();
  pc->add_option("--stats", stats)->required();
  pc->add_option("--perf", perf)->required();
  pc->add_option("--campaigns", campaigns)->required();
  pc->add_option("--k", k, "products to publish");
  pc->add_option("--min-conv", min_conv, "minimum advertiser conversions");
  pc->add_option("--out", out_path)->required();
  pc->callback([&] {
    action = [&] {
      check(dpa_publish_conv(Config(common).get(), model.c_str(), stats.c_str(), perf.c_str(), campaigns.c_str(), k,
                             min_conv, out_path.c_str(), &out));
    };
  });

  auto* tl = verb(app, "train-lookalike", "train per-product lookalike models", common);
  tl->add_option("--world", world_dir)->required();
  tl->add_option("--pixel", pixel)->required();
  tl->add_option("--impressions", impressions)->required();
  tl->add_option("--n", n, "top products per advertiser");
  tl->add_option("--m", m, "negatives per product");
  tl->add_option("--out", out_path)->required();
  tl->callback([&] {
    action = [&] {
      check(dpa_train_lookalike(Config(common).get(), world_dir.c_str(), pixel.c_str(), impressions.c_str(), n, m,
                                out_path.c_str(), &out));
    };
  });

  auto* pt = verb(app, "publish-trendy", "allocate and publish trending products with thresholds", common);
  pt->add_option("--world", world_dir)->required();
  pt->add_option("--feeds", feeds_dir)->required();
  pt->add_option("--model", model, "lookalike tracking file")->required();
  pt->add_option("--t", t, "products to publish");
  pt->add_option("--pct", pct, "target percent of users");
  pt->add_option("--r", r, "sampled users");
  pt->add_option("--out", out_path)->required();
  pt->callback([&] {
    action = [&] {
      check(dpa_publish_trendy(Config(common).get(), world_dir.c_str(), feeds_dir.c_str(), model.c_str(), t, pct, r,
                               out_path.c_str(), &out));
    };
  });

  auto* th = verb(app, "threshold-curve", "threshold curve for one advertiser", common);
  th->add_option("--world", world_dir)->required();
  th->add_option("--feeds", feeds_dir)->required();
  th->add_option("--model", model, "published trending manifest")->required();
  th->add_option("--advertiser", advertiser)->required();
  th->add_option("--pct", pct, "target percent of users");
  th->add_option("--r", r, "sampled users");
  th->add_option("--out", out_path, "output prefix (.csv and .json)")->required();
  th->callback([&] {
    action = [&] {
      check(dpa_threshold_curve(Config(common).get(), world_dir.c_str(), feeds_dir.c_str(), model.c_str(),
                                advertiser.c_str(), pct, r, out_path.c_str(), &out));
    };
  });

  auto* sn = verb(app, "snapshot", "assemble a serving snapshot directory", common);
  sn->add_option("--world", world_dir)->required();
  sn->add_option("--feeds", feeds_dir)->required();
  sn->add_option("--out", out_path)->required();
  sn->callback([&] {
    action = [&] {
      check(dpa_build_snapshots(Config(common).get(), world_dir.c_str(), feeds_dir.c_str(), out_path.c_str(), &out));
    };
  });

  auto* ss = verb(app, "simulate-serve", "replay requests through the serving pipeline", common);
  ss->add_option("--requests", requests)->required();
  ss->add_option("--snapshots", snapshots)->required();
  ss->add_option("--out", out_path, "JSONL output; counters go to <out>.counters.json")->required();
  ss->add_flag("--control", control, "serve without the prospecting sources");
  ss->add_option("--bucket", bucket, "simulate outcomes into this bucket directory");
  ss->add_option("--world", world_dir, "world directory for outcome simulation");
  ss->callback([&] {
    action = [&] {
      check(dpa_simulate_serve(Config(common).get(), requests.c_str(), snapshots.c_str(), out_path.c_str(),
                               control ? 1 : 0, c_or_null(bucket), c_or_null(world_dir), &out));
    };
  });

  auto* ev = verb(app, "eval", "AUC and LogLoss of a model on an event feed", common);
  ev->add_option("--model", model)->required();
  ev->add_option("--test", test)->required();
  ev->add_option("--out", out_path, "output prefix");
  ev->callback([&] {
    action = [&] { check(dpa_eval(model.c_str(), test.c_str(), c_or_null(out_path), &out)); };
  });

  auto* fs = verb(app, "forward-select", "greedy forward feature selection", common);
  fs->add_option("--world", world_dir)->required();
  fs->add_option("--feeds", feeds_dir)->required();
  fs->add_option("--candidates", candidates, "comma-separated feature names");
  fs->add_option("--out", out_path, "output prefix");
  fs->callback([&] {
    action = [&] {
      check(dpa_forward_select(Config(common).get(), world_dir.c_str(), feeds_dir.c_str(), c_or_null(candidates),
                               c_or_null(out_path), &out));
    };
  });

  auto* hp = verb(app, "happiness", "share of spend from advertisers meeting their CPA target", common);
  hp->add_option("--mode", mode)->required()->check(CLI::IsMember({"conv", "trendy"}));
  hp->add_option("--error", error, "allowed relative CPA error");
  hp->add_option("--test-bucket", test_bucket)->required();
  hp->add_option("--control-bucket", control_bucket);
  hp->add_option("--out", out_path, "output prefix");
  hp->callback([&] {
    action = [&] {
      check(dpa_happiness(Config(common).get(), mode.c_str(), error, test_bucket.c_str(), c_or_null(control_bucket),
                          c_or_null(out_path), &out));
    };
  });

  auto* rp = verb(app, "report", "daily spend and delivery lift of test over control", common);
  rp->add_option("--test-bucket", test_bucket)->required();
  rp->add_option("--control-bucket", control_bucket)->required();
  rp->add_option("--out", out_path, "output prefix (.csv and .json)");
  rp->callback([&] {
    action = [&] { check(dpa_report(test_bucket.c_str(), control_bucket.c_str(), c_or_null(out_path), &out)); };
  });

  auto* rn = verb(app, "run", "full pipeline end to end", common);
  rn->add_option("--out", out_path)->required();
  rn->callback([&] { action = [&] { check(dpa_run(Config(common).get(), out_path.c_str(), &out)); }; });

  CLI11_PARSE(app, argc, argv);

  try {
    action();
  } catch (const Failure& f) {
    std::fprintf(stderr, "error [%s]: %s\n", dpa_status_name(f.status), dpa_last_error());
    return 2 + static_cast<int>(f.status);
  }
  print(out);
  return 0;
}
