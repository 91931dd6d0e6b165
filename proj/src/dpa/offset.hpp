#pragma once

// Feature-enhanced factorization event predictor.
//
// A user is represented by K categorical (possibly multi-valued) features.
// Every feature value owns a vector of dimension d = (K-1)*o + s, laid out as
// K-1 pair blocks of width o (one per other feature, in schema order) followed
// by a solo block of width s. The D = C(K,2)*o + K*s dimensional user vector
// holds, for every pair (i,j) in lexicographic order, the entry-wise product
// of i's block-for-j and j's block-for-i, followed by the K solo blocks.
// The ad vector is the sum of the D-dimensional vectors of its feature values.
//
//   score = bias + <user, ad> + sum of similarity-bin weights
//   pET   = sigmoid(score)
//
// Training is one-pass online gradient descent on the L2-regularized log loss
// with per-parameter AdaGrad step sizes. Unseen feature values are created
// lazily from a Gaussian whose draw is keyed on (seed, feature, value).

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dpa/common.hpp"

namespace dpa::offset {

struct Dims {
  std::size_t user = 0;  // d, per-feature-value user vector width
  std::size_t full = 0;  // D, combined user / ad vector width
  bool operator==(const Dims&) const = default;
};

Dims derive_dims(std::size_t features, std::size_t pair_width, std::size_t solo_width);

struct FeatureSchema {
  std::vector<std::string> user_features;
  std::size_t pair_width = 0;
  std::size_t solo_width = 0;
  std::vector<std::string> ad_features;
  std::vector<std::string> similarity_features;

  // Throws invalid_schema.
  void validate() const;
  Dims dims() const { return derive_dims(user_features.size(), pair_width, solo_width); }
  bool operator==(const FeatureSchema&) const = default;
};

struct WeightedValue {
  std::string value;
  double weight = 1.0;
  bool operator==(const WeightedValue&) const = default;
};

enum class EventKind { click, skip, conversion, purchase, add_to_cart, impression };

std::string_view to_string(EventKind kind);
EventKind parse_event_kind(std::string_view s);

struct Event {
  std::map<std::string, std::vector<WeightedValue>> user_values;
  std::map<std::string, std::string> ad_values;
  std::map<std::string, std::string> sim_bins;
  int label = 0;
  EventKind kind = EventKind::impression;
  std::int64_t timestamp = 0;
  bool operator==(const Event&) const = default;
};

// Internal table key for a (feature, value) pair.
std::string table_key(std::string_view feature, std::string_view value);

struct LatentEntry {
  std::vector<double> value;
  std::vector<double> acc;  // AdaGrad accumulators, same shape as value
};

struct ScalarParam {
  double value = 0.0;
  double acc = 0.0;
};

class LatentTable {
 public:
  LatentTable() = default;
  LatentTable(std::size_t dim, double init_variance, std::uint64_t seed, std::string tag);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  double init_variance() const { return init_variance_; }

  const LatentEntry* find(std::string_view feature, std::string_view value) const;
  LatentEntry* find(std::string_view feature, std::string_view value);
  LatentEntry& get_or_init(std::string_view feature, std::string_view value);

  // The stored vector, or the deterministic lazy draw for an unseen value
  // (written into `scratch`; nothing is stored).
  std::span<const double> view(std::string_view feature, std::string_view value,
                               std::vector<double>& scratch) const;
  std::vector<double> lookup(std::string_view feature, std::string_view value) const;

  void set(std::string_view feature, std::string_view value, std::span<const double> v);
  bool erase(std::string_view feature, std::string_view value);
  bool contains(std::string_view feature, std::string_view value) const {
    return find(feature, value) != nullptr;
  }

  // Keys in sorted order (for deterministic serialization).
  std::vector<std::string> sorted_keys() const;
  const std::unordered_map<std::string, LatentEntry>& entries() const { return entries_; }
  std::unordered_map<std::string, LatentEntry>& entries() { return entries_; }

  void draw_initial(std::string_view key, std::vector<double>& out) const;

 private:
  std::size_t dim_ = 0;
  double init_variance_ = 0.01;
  std::uint64_t seed_ = 0;
  std::string tag_;
  std::unordered_map<std::string, LatentEntry> entries_;
};

struct Hyperparams {
  double lambda = 1e-5;
  double eta0 = 0.05;
  double init_variance = 0.01;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  bool operator==(const Hyperparams&) const = default;
};

class ModelState {
 public:
  ModelState(FeatureSchema schema, Hyperparams hyper);

  const FeatureSchema& schema() const { return schema_; }
  const Hyperparams& hyper() const { return hyper_; }
  const Dims& dims() const { return dims_; }

  ScalarParam bias;
  LatentTable user_table;
  LatentTable ad_table;
  std::unordered_map<std::string, ScalarParam> sim_weights;

  double sim_weight(std::string_view feature, std::string_view bin) const;

  std::size_t user_index(std::string_view feature) const;  // npos if absent
  std::size_t ad_index(std::string_view feature) const;
  std::size_t sim_index(std::string_view feature) const;

 private:
  FeatureSchema schema_;
  Hyperparams hyper_;
  Dims dims_;
};

// Immutable serving snapshot; safe for any number of concurrent readers.
using FrozenModel = std::shared_ptr<const ModelState>;
FrozenModel freeze(ModelState model);

void validate_event(const Event& event, const FeatureSchema& schema);

inline constexpr double kProbFloor = 1e-12;
double sigmoid(double x);
double clamp_probability(double p);

std::vector<double> aggregate_feature(std::span<const WeightedValue> values, const LatentTable& table,
                                      std::string_view feature);
std::vector<double> build_user_vector(const Event& event, const ModelState& model);
std::vector<double> build_ad_vector(const Event& event, const ModelState& model);
double score(const Event& event, const ModelState& model);

// Building blocks for scoring many ads against one user: the ad vector of an
// assignment, and bias + <user, ad> + similarity weights (same arithmetic as
// score()).
std::vector<double> ad_vector_of(const ModelState& model, const std::map<std::string, std::string>& ad_values);
double score_from_vectors(const ModelState& model, std::span<const double> user, std::span<const double> ad,
                          const std::map<std::string, std::string>& sim_bins);
double predict(const Event& event, const ModelState& model);

// Per-event objective: log loss plus (lambda/2) * squared norm of every
// parameter the event touches.
double event_loss(const Event& event, const ModelState& model);

// Gradient of event_loss with respect to every touched parameter, keyed by
// table_key(feature, value) (vectors) and table_key(feature, bin) (weights).
struct Gradient {
  double bias = 0.0;
  std::map<std::string, std::vector<double>> user;
  std::map<std::string, std::vector<double>> ad;
  std::map<std::string, double> sim;
  double prediction = 0.0;
};
Gradient compute_gradient(const Event& event, const ModelState& model);

// One AdaGrad step; returns the event's log loss before the update.
double train_step(const Event& event, ModelState& model);
void train_batch(std::span<const Event> events, ModelState& model);

// Line-based snapshot format, doubles stored as hexfloats (lossless).
void save_model(const ModelState& model, std::ostream& out);
ModelState load_model(std::istream& in);
void save_model_file(const ModelState& model, const std::string& path);
ModelState load_model_file(const std::string& path);

}  // namespace dpa::offset
