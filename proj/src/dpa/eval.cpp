#include "dpa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dpa::eval {

namespace {

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::invalid_input,
                "length mismatch: " + std::to_string(a) + " predictions, " + std::to_string(b) + " labels");
  }
}

void check_binary(int y) {
  if (y != 0 && y != 1) throw Error(ErrorCode::invalid_input, "labels must be 0 or 1");
}

std::string percent(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v << '%';
  return os.str();
}

}  // namespace

double logloss(std::span<const double> predictions, std::span<const int> labels) {
  check_lengths(predictions.size(), labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    check_binary(labels[i]);
    if (std::isnan(predictions[i])) throw Error(ErrorCode::invalid_input, "NaN prediction");
    const double q = offset::clamp_probability(predictions[i]);
    total += labels[i] ? -std::log(q) : -std::log1p(-q);
  }
  return total;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_lengths(scores.size(), labels.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    check_binary(labels[i]);
    if (std::isnan(scores[i])) throw Error(ErrorCode::invalid_input, "NaN score");
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk groups of equal score in ascending order.
  std::uint64_t negatives_below = 0, positives = 0, negatives = 0;
  std::uint64_t twice_credit = 0;  // 2 * correct pairs + tied pairs
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos : neg) += 1;
      ++j;
    }
    twice_credit += 2 * pos * negatives_below + pos * neg;
    negatives_below += neg;
    positives += pos;
    negatives += neg;
    i = j;
  }
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorCode::undefined_metric, "AUC needs at least one positive and one negative");
  }
  return static_cast<double>(twice_credit) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

double lift(double metric_model, double metric_baseline, Direction direction) {
  if (!(metric_model > 0.0) || !(metric_baseline > 0.0)) {
    throw Error(ErrorCode::invalid_input, "lift needs positive metrics");
  }
  return direction == Direction::higher_better ? (metric_model / metric_baseline - 1.0) * 100.0
                                               : (metric_baseline / metric_model - 1.0) * 100.0;
}

MetricReport evaluate(const offset::ModelState& model, std::span<const offset::Event> test) {
  std::vector<double> preds;
  std::vector<int> labels;
  preds.reserve(test.size());
  labels.reserve(test.size());
  for (const auto& ev : test) {
    preds.push_back(offset::predict(ev, model));
    labels.push_back(ev.label);
  }
  MetricReport r;
  r.n_events = test.size();
  r.n_positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  r.logloss = logloss(preds, labels);
  r.auc = (r.n_positives == 0 || r.n_positives == r.n_events) ? 0.5 : auc(preds, labels);
  return r;
}

// ---- forward selection ------------------------------------------------------

std::vector<offset::Event> project_events(std::span<const offset::Event> events,
                                          const std::vector<std::string>& user_features) {
  std::vector<offset::Event> out;
  out.reserve(events.size());
  for (const auto& ev : events) {
    offset::Event p;
    p.ad_values = ev.ad_values;
    p.sim_bins = ev.sim_bins;
    p.label = ev.label;
    p.kind = ev.kind;
    p.timestamp = ev.timestamp;
    if (user_features.empty()) {
      p.user_values[kConstantFeature] = {{"1", 1.0}};
    }
    for (const auto& f : user_features) {
      auto it = ev.user_values.find(f);
      if (it == ev.user_values.end()) {
        throw Error(ErrorCode::incomplete_event, "event lacks user feature '" + f + "'");
      }
      p.user_values.emplace(f, it->second);
    }
    out.push_back(std::move(p));
  }
  return out;
}

offset::ModelState train_subset(const SelectionConfig& config, const std::vector<std::string>& user_features,
                                std::span<const offset::Event> train, std::uint64_t seed) {
  offset::FeatureSchema schema;
  schema.user_features = user_features.empty() ? std::vector<std::string>{kConstantFeature} : user_features;
  schema.pair_width = config.pair_width;
  schema.solo_width = config.solo_width;
  schema.ad_features = config.ad_features;
  schema.similarity_features = config.similarity_features;
  auto hyper = config.hyper;
  hyper.seed = seed;
  offset::ModelState model(schema, hyper);
  const auto events = project_events(train, user_features);
  for (std::size_t pass = 0; pass < std::max<std::size_t>(config.passes, 1); ++pass) {
    offset::train_batch(events, model);
  }
  return model;
}

namespace {

MetricReport trial(const SelectionConfig& config, const std::vector<std::string>& features,
                   std::span<const offset::Event> train, std::span<const offset::Event> test, std::uint64_t seed) {
  const auto model = train_subset(config, features, train, seed);
  return evaluate(model, project_events(test, features));
}

}  // namespace

SelectionResult forward_selection(const SelectionConfig& config, const std::vector<std::string>& candidates,
                                  std::span<const offset::Event> train, std::span<const offset::Event> test) {
  std::set<std::string> seen(config.base_features.begin(), config.base_features.end());
  for (const auto& c : candidates) {
    if (!seen.insert(c).second) throw Error(ErrorCode::invalid_input, "duplicate candidate '" + c + "'");
  }
  SelectionResult result;
  std::vector<std::string> incumbent = config.base_features;
  result.baseline = trial(config, incumbent, train, test, stream_seed(config.hyper.seed, "select/base"));
  if (candidates.empty()) return result;

  MetricReport best_so_far = result.baseline;
  std::vector<std::string> remaining = candidates;
  for (std::size_t step = 1; !remaining.empty(); ++step) {
    std::vector<CandidateTrial> trials(remaining.size());
    auto run = [&](std::size_t i) {
      auto features = incumbent;
      features.push_back(remaining[i]);
      const auto seed =
          stream_seed(config.hyper.seed, "select/" + std::to_string(step) + "/" + remaining[i]);
      trials[i] = {remaining[i], trial(config, features, train, test, seed)};
    };
    if (config.parallel && remaining.size() > 1) {
      std::vector<std::future<void>> jobs;
      for (std::size_t i = 0; i < remaining.size(); ++i) jobs.push_back(std::async(std::launch::async, run, i));
      for (auto& j : jobs) j.get();
    } else {
      for (std::size_t i = 0; i < remaining.size(); ++i) run(i);
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < trials.size(); ++i) {
      if (trials[i].metrics.logloss < trials[best].metrics.logloss) best = i;
    }
    if (!(trials[best].metrics.logloss < best_so_far.logloss)) break;

    SelectionStep s;
    s.feature = trials[best].feature;
    s.metrics = trials[best].metrics;
    s.auc_lift = lift(s.metrics.auc, result.baseline.auc, Direction::higher_better);
    s.logloss_lift = lift(s.metrics.logloss, result.baseline.logloss, Direction::lower_better);
    s.trials = trials;
    result.accepted.push_back(std::move(s));
    best_so_far = trials[best].metrics;
    incumbent.push_back(trials[best].feature);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best));
  }
  result.rejected = remaining;
  return result;
}

namespace {

std::string row_label(std::size_t n) {
  std::string s = std::to_string(n) + " (";
  for (std::size_t i = 1; i <= n; ++i) s += (i > 1 ? "+" : "") + std::to_string(i);
  return s + ")";
}

}  // namespace

std::string selection_table_csv(const SelectionResult& result) {
  std::ostringstream os;
  os << "# Feature,Feature,AUC lift,Logloss lift\n";
  for (std::size_t i = 0; i < result.accepted.size(); ++i) {
    const auto& s = result.accepted[i];
    os << row_label(i + 1) << ',' << s.feature << ',' << percent(s.auc_lift) << ',' << percent(s.logloss_lift)
       << '\n';
  }
  return os.str();
}

std::string selection_table_text(const SelectionResult& result) {
  std::ostringstream os;
  os << "# Feature | Feature | AUC lift | Logloss lift\n";
  for (std::size_t i = 0; i < result.accepted.size(); ++i) {
    const auto& s = result.accepted[i];
    os << row_label(i + 1) << " | " << s.feature << " | " << percent(s.auc_lift) << " | "
       << percent(s.logloss_lift) << '\n';
  }
  return os.str();
}

std::string selection_json(const SelectionResult& result) {
  auto metrics = [](const MetricReport& m) {
    return nlohmann::ordered_json{
        {"logloss", m.logloss}, {"auc", m.auc}, {"n_events", m.n_events}, {"n_positives", m.n_positives}};
  };
  nlohmann::ordered_json j;
  j["baseline"] = metrics(result.baseline);
  auto steps = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < result.accepted.size(); ++i) {
    const auto& s = result.accepted[i];
    auto trials = nlohmann::ordered_json::array();
    for (const auto& t : s.trials) trials.push_back({{"feature", t.feature}, {"metrics", metrics(t.metrics)}});
    steps.push_back({{"row", row_label(i + 1)},
                     {"feature", s.feature},
                     {"metrics", metrics(s.metrics)},
                     {"auc_lift", s.auc_lift},
                     {"logloss_lift", s.logloss_lift},
                     {"trials", trials}});
  }
  j["accepted"] = steps;
  j["rejected"] = result.rejected;
  return j.dump(2);
}

// ---- CPA and happiness ------------------------------------------------------

double cpa(Cents spend, std::int64_t conversions) {
  if (conversions <= 0) throw Error(ErrorCode::undefined_metric, "CPA undefined without conversions");
  if (spend < 0) throw Error(ErrorCode::invalid_input, "negative spend");
  return static_cast<double>(spend) / static_cast<double>(conversions);
}

HappinessMode parse_happiness_mode(std::string_view s) {
  if (s == "conv") return HappinessMode::conv;
  if (s == "trendy") return HappinessMode::trendy;
  throw Error(ErrorCode::config, "happiness mode must be conv or trendy, got '" + std::string(s) + "'");
}

double target_cpa(HappinessMode mode, double reference_cpa) {
  return mode == HappinessMode::conv ? 1.5 * reference_cpa : reference_cpa;
}

bool is_happy(double cpa_value, double tcpa, double error) {
  if (!(tcpa > 0.0)) throw Error(ErrorCode::invalid_input, "target CPA must be positive");
  if (error < 0.0) throw Error(ErrorCode::invalid_input, "error margin must be nonnegative");
  const double bound = 1.0 + error;
  return cpa_value / tcpa <= bound * (1.0 + 1e-9);
}

HappinessReport happiness(std::span<const AdvertiserOutcome> outcomes, HappinessMode mode, double error,
                          std::int64_t min_conversions) {
  HappinessReport r;
  for (const auto& o : outcomes) {
    if (o.conversions < std::max<std::int64_t>(min_conversions, 1)) {
      ++r.excluded_low_conversions;
      continue;
    }
    if (!o.reference_cpa || !(*o.reference_cpa > 0.0)) {
      ++r.excluded_missing_target;
      continue;
    }
    AdvertiserJudgement j;
    j.advertiser = o.advertiser;
    j.spend = o.spend;
    j.cpa = cpa(o.spend, o.conversions);
    j.tcpa = target_cpa(mode, *o.reference_cpa);
    j.ratio = j.cpa / j.tcpa;
    j.happy = is_happy(j.cpa, j.tcpa, error);
    r.total_spend += o.spend;
    if (j.happy) r.happy_spend += o.spend;
    r.judged.push_back(std::move(j));
  }
  if (r.total_spend > 0) {
    r.percent = 100.0 * static_cast<double>(r.happy_spend) / static_cast<double>(r.total_spend);
  }
  return r;
}

std::string happiness_csv(const HappinessReport& report) {
  std::ostringstream os;
  os << "advertiser,spend,cpa,tcpa,ratio,happy\n";
  for (const auto& j : report.judged) {
    os << j.advertiser << ',' << j.spend << ',' << j.cpa << ',' << j.tcpa << ',' << j.ratio << ','
       << (j.happy ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string happiness_json(const HappinessReport& report) {
  nlohmann::ordered_json j;
  j["happy_percent"] = report.percent;
  j["happy_spend"] = report.happy_spend;
  j["total_spend"] = report.total_spend;
  j["advertisers"] = report.judged.size();
  j["excluded_low_conversions"] = report.excluded_low_conversions;
  j["excluded_missing_target"] = report.excluded_missing_target;
  return j.dump(2);
}

// ---- bucket lift reports ----------------------------------------------------

LiftReport bucket_lift_report(std::span<const BucketDay> test, std::span<const BucketDay> control) {
  std::map<std::int64_t, const BucketDay*> t, c;
  for (const auto& d : test) t[d.day] = &d;
  for (const auto& d : control) c[d.day] = &d;
  std::set<std::int64_t> days;
  for (auto& [d, _] : t) days.insert(d);
  for (auto& [d, _] : c) days.insert(d);

  LiftReport r;
  for (auto day : days) {
    auto ti = t.find(day);
    auto ci = c.find(day);
    if (ti == t.end() || ci == c.end() || ti->second->spend <= 0 || ci->second->spend <= 0 ||
        ti->second->impressions <= 0 || ci->second->impressions <= 0) {
      r.skipped_days.push_back(day);
      continue;
    }
    DayLift l;
    l.day = day;
    l.spend_lift = lift(static_cast<double>(ti->second->spend), static_cast<double>(ci->second->spend),
                        Direction::higher_better);
    l.delivery_lift = lift(static_cast<double>(ti->second->impressions),
                           static_cast<double>(ci->second->impressions), Direction::higher_better);
    r.days.push_back(l);
  }
  if (!r.days.empty()) {
    for (const auto& d : r.days) {
      r.avg_spend_lift += d.spend_lift;
      r.avg_delivery_lift += d.delivery_lift;
    }
    r.avg_spend_lift /= static_cast<double>(r.days.size());
    r.avg_delivery_lift /= static_cast<double>(r.days.size());
  }
  return r;
}

std::string lift_report_csv(const LiftReport& report) {
  std::ostringstream os;
  os.precision(6);
  os << "day,spend_lift_pct,delivery_lift_pct\n";
  for (const auto& d : report.days) os << d.day << ',' << d.spend_lift << ',' << d.delivery_lift << '\n';
  os << "average," << report.avg_spend_lift << ',' << report.avg_delivery_lift << '\n';
  return os.str();
}

std::string lift_report_json(const LiftReport& report) {
  nlohmann::ordered_json j;
  auto days = nlohmann::ordered_json::array();
  for (const auto& d : report.days) {
    days.push_back({{"day", d.day}, {"spend_lift", d.spend_lift}, {"delivery_lift", d.delivery_lift}});
  }
  j["days"] = days;
  j["avg_spend_lift"] = report.avg_spend_lift;
  j["avg_delivery_lift"] = report.avg_delivery_lift;
  j["skipped_days"] = report.skipped_days;
  return j.dump(2);
}

}  // namespace dpa::eval
