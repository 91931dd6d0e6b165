#pragma once

// Offline metrics (LogLoss, AUC), lifts, wrapper forward selection, CPA and
// advertiser happiness, and daily bucket lift reports.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpa/common.hpp"
#include "dpa/offset.hpp"

namespace dpa::eval {

struct MetricReport {
  double logloss = 0.0;  // summed over events
  double auc = 0.5;
  std::size_t n_events = 0;
  std::size_t n_positives = 0;
};

// Sum of per-event log losses; predictions are clamped to [1e-12, 1-1e-12].
double logloss(std::span<const double> predictions, std::span<const int> labels);

// Probability that a random (positive, negative) pair is ordered correctly,
// ties worth one half. Sort based; exact (computed from integer pair counts).
double auc(std::span<const double> scores, std::span<const int> labels);

enum class Direction { higher_better, lower_better };
double lift(double metric_model, double metric_baseline, Direction direction);

MetricReport evaluate(const offset::ModelState& model, std::span<const offset::Event> test);

// ---- forward selection ------------------------------------------------------

// Stand-in user feature of the product-features-only baseline: a single
// constant value shared by every event.
inline constexpr const char* kConstantFeature = "__const__";

struct SelectionConfig {
  std::vector<std::string> base_features;  // empty = product features only
  std::vector<std::string> ad_features;
  std::vector<std::string> similarity_features;
  std::size_t pair_width = 4;
  std::size_t solo_width = 2;
  std::size_t passes = 3;
  offset::Hyperparams hyper;
  bool parallel = true;
};

struct CandidateTrial {
  std::string feature;
  MetricReport metrics;
};

struct SelectionStep {
  std::string feature;
  MetricReport metrics;
  double auc_lift = 0.0;      // cumulative, vs the baseline
  double logloss_lift = 0.0;  // cumulative, vs the baseline
  std::vector<CandidateTrial> trials;
};

struct SelectionResult {
  MetricReport baseline;
  std::vector<SelectionStep> accepted;
  std::vector<std::string> rejected;
};

// Greedy wrapper selection on test LogLoss: each step trains one model per
// remaining candidate from scratch and accepts the one with the lowest test
// LogLoss if it beats the incumbent.
SelectionResult forward_selection(const SelectionConfig& config, const std::vector<std::string>& candidates,
                                  std::span<const offset::Event> train, std::span<const offset::Event> test);

// Trains a fresh model on the given user features (train events projected).
offset::ModelState train_subset(const SelectionConfig& config, const std::vector<std::string>& user_features,
                                std::span<const offset::Event> train, std::uint64_t seed);
std::vector<offset::Event> project_events(std::span<const offset::Event> events,
                                          const std::vector<std::string>& user_features);

// "# Feature,Feature,AUC lift,Logloss lift" followed by rows "1 (1),a,..%,..%".
std::string selection_table_csv(const SelectionResult& result);
std::string selection_table_text(const SelectionResult& result);
std::string selection_json(const SelectionResult& result);

// ---- CPA and happiness ------------------------------------------------------

// spend / conversions in cents; throws undefined_metric on zero conversions.
double cpa(Cents spend, std::int64_t conversions);

enum class HappinessMode { conv, trendy };
HappinessMode parse_happiness_mode(std::string_view s);

struct AdvertiserOutcome {
  std::string advertiser;
  Cents spend = 0;
  std::int64_t conversions = 0;
  // Reference CPA the target is derived from: retargeting CPA (conv mode) or
  // control-bucket CPA (trendy mode).
  std::optional<double> reference_cpa;
};

double target_cpa(HappinessMode mode, double reference_cpa);

struct AdvertiserJudgement {
  std::string advertiser;
  Cents spend = 0;
  double cpa = 0.0;
  double tcpa = 0.0;
  double ratio = 0.0;
  bool happy = false;
};

struct HappinessReport {
  double percent = 0.0;  // happy spend / total spend * 100
  Cents happy_spend = 0;
  Cents total_spend = 0;
  std::vector<AdvertiserJudgement> judged;
  std::size_t excluded_low_conversions = 0;
  std::size_t excluded_missing_target = 0;
};

// Happy iff CPA / tCPA <= 1 + error (compared with a 1e-9 relative slack so
// decimal boundaries such as 1.515 / 1.5 land on the bound).
bool is_happy(double cpa, double tcpa, double error);

HappinessReport happiness(std::span<const AdvertiserOutcome> outcomes, HappinessMode mode, double error,
                          std::int64_t min_conversions = 10);

std::string happiness_csv(const HappinessReport& report);
std::string happiness_json(const HappinessReport& report);

// ---- bucket lift reports ----------------------------------------------------

struct AdvertiserDay {
  Cents spend = 0;
  std::int64_t conversions = 0;
};

struct BucketDay {
  std::int64_t day = 0;
  Cents spend = 0;
  std::int64_t impressions = 0;
  std::map<std::string, AdvertiserDay> advertisers;
};

struct DayLift {
  std::int64_t day = 0;
  double spend_lift = 0.0;
  double delivery_lift = 0.0;
};

struct LiftReport {
  std::vector<DayLift> days;
  double avg_spend_lift = 0.0;
  double avg_delivery_lift = 0.0;
  std::vector<std::int64_t> skipped_days;
};

LiftReport bucket_lift_report(std::span<const BucketDay> test, std::span<const BucketDay> control);
std::string lift_report_csv(const LiftReport& report);
std::string lift_report_json(const LiftReport& report);

}  // namespace dpa::eval
