#pragma once

// Command layer: one function per CLI verb, all driven by a single
// declarative run configuration plus overrides. Every verb returns a JSON
// summary.

#include <cstdint>
#include <string>
#include <vector>

#include "dpa/click_model.hpp"
#include "dpa/conversion.hpp"
#include "dpa/eval.hpp"
#include "dpa/serving.hpp"
#include "dpa/trending.hpp"
#include "dpa/world.hpp"
#include "json.hpp"

namespace dpa::workbench {

inline constexpr const char* kToolVersion = "dpa-workbench 1.0.0";

struct RunConfig {
  std::uint64_t seed = 1;
  world::SyntheticWorldConfig world;
  click::ClickModelConfig click;
  conversion::ConvModelConfig conv;
  trending::LookalikeConfig lookalike;
  double trendy_percentile = 5.0;
  serving::PipelineConfig serve;
  std::size_t threads = 4;
  std::vector<std::string> select_candidates{conversion::feature::kCtrCampaignTop, conversion::feature::kDpaType,
                                             conversion::feature::kPageSection};
  double happiness_error_conv = 0.01;
  double happiness_error_trendy = 0.10;
  std::int64_t happiness_min_conversions = 10;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  // Sets "world.n_users=500" style overrides; the value is parsed as JSON
  // when possible, else taken as a string.
  static void apply_override(nlohmann::json& j, const std::string& assignment);
  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides, std::uint64_t seed);
  std::string hash() const;
};

// SHA-256 of a file, lowercase hex.
std::string file_digest(const std::string& path);

nlohmann::json gen_world(const RunConfig& cfg, const std::string& out_dir);
nlohmann::json gen_feeds(const RunConfig& cfg, const std::string& world_dir, const std::string& out_dir);

// Trains the click model on days [0, days - 1) and writes the held-out last
// day as an event feed for eval.
nlohmann::json train_click(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                           const std::string& out_dir);
nlohmann::json train_conv(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                          const std::string& out_dir);
nlohmann::json publish_conv(const RunConfig& cfg, const std::string& model_path, const std::string& stats_path,
                            const std::string& perf_path, const std::string& campaigns_path, std::int64_t k,
                            std::int64_t min_conv, const std::string& out_path);
// pixel / impressions: a feed directory (all days) or a single day file.
nlohmann::json train_lookalike(const RunConfig& cfg, const std::string& world_dir, const std::string& pixel,
                               const std::string& impressions, std::size_t n, std::size_t m,
                               const std::string& out_path);
nlohmann::json publish_trendy(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                              const std::string& lookalike_path, std::size_t t, double pct, std::size_t r,
                              const std::string& out_path);
nlohmann::json threshold_curve(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                               const std::string& published_path, const std::string& advertiser, double pct,
                               std::size_t r, const std::string& out_path);

// Copies world tables and derived serving tables next to the models.
nlohmann::json build_snapshots(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                               const std::string& snapshot_dir);

struct ServeOptions {
  bool control = false;           // drop the prospecting sources
  std::string bucket_dir;         // when set, simulate outcomes and write bucket.tsv
  std::string world_dir;          // planted rates for outcome simulation
};
nlohmann::json simulate_serve(const RunConfig& cfg, const std::string& requests_path,
                              const std::string& snapshot_dir, const std::string& out_path,
                              const ServeOptions& options);

nlohmann::json eval_model(const std::string& model_path, const std::string& test_path, const std::string& out_prefix);
nlohmann::json forward_select(const RunConfig& cfg, const std::string& world_dir, const std::string& feeds_dir,
                              const std::vector<std::string>& candidates, const std::string& out_prefix);
nlohmann::json happiness(const RunConfig& cfg, eval::HappinessMode mode, double error, const std::string& test_bucket,
                         const std::string& control_bucket, const std::string& out_prefix);
nlohmann::json report(const std::string& test_bucket, const std::string& control_bucket,
                      const std::string& out_prefix);

// gen-world -> gen-feeds -> train -> publish -> simulate-serve (test and
// control buckets) -> eval -> report; writes manifest.json into out_dir.
nlohmann::json run_pipeline(const RunConfig& cfg, const std::string& out_dir);

// Request records joined with the snapshot's user profiles.
std::vector<serving::ServeRequest> load_requests(const std::string& requests_path, const std::string& snapshot_dir);

// Serving bundle loaded from a snapshot directory.
serving::SnapshotBundle load_bundle(const std::string& snapshot_dir, bool control,
                                    const click::ClickModelConfig& click_config);

}  // namespace dpa::workbench
