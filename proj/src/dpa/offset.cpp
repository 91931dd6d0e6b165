#include "dpa/offset.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <set>

namespace dpa::offset {

Dims derive_dims(std::size_t features, std::size_t pair_width, std::size_t solo_width) {
  if (features == 0) {
    throw Error(ErrorCode::invalid_schema, "schema needs at least one user feature");
  }
  const std::size_t pairs = features * (features - 1) / 2;
  return Dims{(features - 1) * pair_width + solo_width, pairs * pair_width + features * solo_width};
}

namespace {

void check_unique(const std::vector<std::string>& names, std::string_view list) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) {
      throw Error(ErrorCode::invalid_schema, "empty feature name in " + std::string(list));
    }
    if (!seen.insert(n).second) {
      throw Error(ErrorCode::invalid_schema, "duplicate feature '" + n + "' in " + std::string(list));
    }
  }
}

}  // namespace

void FeatureSchema::validate() const {
  const Dims d = dims();
  if (d.user == 0) {
    throw Error(ErrorCode::invalid_schema, "user vector dimension (K-1)*o + s must be at least 1");
  }
  if (d.full == 0) {
    throw Error(ErrorCode::invalid_schema, "combined vector dimension must be at least 1");
  }
  check_unique(user_features, "user features");
  check_unique(ad_features, "ad features");
  check_unique(similarity_features, "similarity features");
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::click: return "click";
    case EventKind::skip: return "skip";
    case EventKind::conversion: return "conversion";
    case EventKind::purchase: return "purchase";
    case EventKind::add_to_cart: return "add_to_cart";
    case EventKind::impression: return "impression";
  }
  return "impression";
}

EventKind parse_event_kind(std::string_view s) {
  for (auto k : {EventKind::click, EventKind::skip, EventKind::conversion, EventKind::purchase,
                 EventKind::add_to_cart, EventKind::impression}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorCode::parse, "unknown event kind '" + std::string(s) + "'");
}

std::string table_key(std::string_view feature, std::string_view value) {
  std::string key;
  key.reserve(feature.size() + value.size() + 1);
  key.append(feature);
  key.push_back('\x1f');
  key.append(value);
  return key;
}

LatentTable::LatentTable(std::size_t dim, double init_variance, std::uint64_t seed, std::string tag)
    : dim_(dim), init_variance_(init_variance), seed_(seed), tag_(std::move(tag)) {}

const LatentEntry* LatentTable::find(std::string_view feature, std::string_view value) const {
  auto it = entries_.find(table_key(feature, value));
  return it == entries_.end() ? nullptr : &it->second;
}

LatentEntry* LatentTable::find(std::string_view feature, std::string_view value) {
  auto it = entries_.find(table_key(feature, value));
  return it == entries_.end() ? nullptr : &it->second;
}

void LatentTable::draw_initial(std::string_view key, std::vector<double>& out) const {
  out.assign(dim_, 0.0);
  if (init_variance_ <= 0.0) return;
  std::mt19937_64 rng(stable_hash(key, stable_hash(tag_, seed_)));
  std::normal_distribution<double> normal(0.0, std::sqrt(init_variance_));
  for (auto& x : out) x = normal(rng);
}

LatentEntry& LatentTable::get_or_init(std::string_view feature, std::string_view value) {
  auto key = table_key(feature, value);
  auto it = entries_.find(key);
  if (it != entries_.end()) return it->second;
  LatentEntry entry;
  draw_initial(key, entry.value);
  entry.acc.assign(dim_, 0.0);
  return entries_.emplace(std::move(key), std::move(entry)).first->second;
}

std::span<const double> LatentTable::view(std::string_view feature, std::string_view value,
                                          std::vector<double>& scratch) const {
  if (const auto* e = find(feature, value)) return e->value;
  draw_initial(table_key(feature, value), scratch);
  return scratch;
}

std::vector<double> LatentTable::lookup(std::string_view feature, std::string_view value) const {
  std::vector<double> scratch;
  auto v = view(feature, value, scratch);
  return {v.begin(), v.end()};
}

void LatentTable::set(std::string_view feature, std::string_view value, std::span<const double> v) {
  if (v.size() != dim_) {
    throw Error(ErrorCode::invalid_input, "vector dimension mismatch for " + std::string(feature) + "=" +
                                              std::string(value));
  }
  auto& e = get_or_init(feature, value);
  e.value.assign(v.begin(), v.end());
}

bool LatentTable::erase(std::string_view feature, std::string_view value) {
  return entries_.erase(table_key(feature, value)) > 0;
}

std::vector<std::string> LatentTable::sorted_keys() const {
  std::vector<std::string> keys;
  keys.reserve(entries_.size());
  for (const auto& [k, _] : entries_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

ModelState::ModelState(FeatureSchema schema, Hyperparams hyper)
    : schema_(std::move(schema)), hyper_(hyper) {
  schema_.validate();
  if (!(hyper_.eta0 > 0.0) || hyper_.lambda < 0.0 || hyper_.init_variance < 0.0 || !(hyper_.epsilon > 0.0)) {
    throw Error(ErrorCode::invalid_schema, "hyperparameters out of range");
  }
  dims_ = schema_.dims();
  user_table = LatentTable(dims_.user, hyper_.init_variance, hyper_.seed, "user");
  ad_table = LatentTable(dims_.full, hyper_.init_variance, hyper_.seed, "ad");
}

double ModelState::sim_weight(std::string_view feature, std::string_view bin) const {
  auto it = sim_weights.find(table_key(feature, bin));
  return it == sim_weights.end() ? 0.0 : it->second.value;
}

namespace {

std::size_t index_of(const std::vector<std::string>& names, std::string_view name) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  return std::string::npos;
}

}  // namespace

std::size_t ModelState::user_index(std::string_view feature) const {
  return index_of(schema_.user_features, feature);
}
std::size_t ModelState::ad_index(std::string_view feature) const {
  return index_of(schema_.ad_features, feature);
}
std::size_t ModelState::sim_index(std::string_view feature) const {
  return index_of(schema_.similarity_features, feature);
}

FrozenModel freeze(ModelState model) { return std::make_shared<const ModelState>(std::move(model)); }

void validate_event(const Event& event, const FeatureSchema& schema) {
  for (const auto& [name, values] : event.user_values) {
    if (index_of(schema.user_features, name) == std::string::npos) {
      throw Error(ErrorCode::invalid_event, "user feature '" + name + "' not in schema");
    }
    if (values.empty()) {
      throw Error(ErrorCode::invalid_event, "user feature '" + name + "' present with no values");
    }
    for (const auto& wv : values) {
      if (!std::isfinite(wv.weight)) {
        throw Error(ErrorCode::invalid_event, "non-finite weight on " + name + "=" + wv.value);
      }
    }
  }
  for (const auto& [name, _] : event.ad_values) {
    if (index_of(schema.ad_features, name) == std::string::npos) {
      throw Error(ErrorCode::invalid_event, "ad feature '" + name + "' not in schema");
    }
  }
  for (const auto& [name, _] : event.sim_bins) {
    if (index_of(schema.similarity_features, name) == std::string::npos) {
      throw Error(ErrorCode::invalid_event, "similarity feature '" + name + "' not in schema");
    }
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_probability(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

namespace {

struct ResolvedValue {
  std::string key;
  std::span<const double> vec;
  double weight = 1.0;
};

struct Resolved {
  std::vector<std::vector<ResolvedValue>> user;  // schema order
  std::vector<ResolvedValue> ad;
  std::vector<std::pair<std::string, double>> sim;  // key, weight value
  std::deque<std::vector<double>> scratch;
};

void check_weights(std::span<const WeightedValue> values, std::string_view feature) {
  for (const auto& wv : values) {
    if (!std::isfinite(wv.weight)) {
      throw Error(ErrorCode::invalid_event,
                  "non-finite weight on " + std::string(feature) + "=" + wv.value);
    }
  }
}

Resolved resolve(const Event& event, const ModelState& model) {
  validate_event(event, model.schema());
  const auto& schema = model.schema();
  Resolved r;
  r.user.resize(schema.user_features.size());
  for (std::size_t k = 0; k < schema.user_features.size(); ++k) {
    const auto& name = schema.user_features[k];
    auto it = event.user_values.find(name);
    if (it == event.user_values.end()) {
      throw Error(ErrorCode::incomplete_event, "missing user feature '" + name + "'");
    }
    for (const auto& wv : it->second) {
      auto& scratch = r.scratch.emplace_back();
      r.user[k].push_back({table_key(name, wv.value), model.user_table.view(name, wv.value, scratch), wv.weight});
    }
  }
  for (const auto& name : schema.ad_features) {
    auto it = event.ad_values.find(name);
    if (it == event.ad_values.end()) continue;
    auto& scratch = r.scratch.emplace_back();
    r.ad.push_back({table_key(name, it->second), model.ad_table.view(name, it->second, scratch), 1.0});
  }
  if (r.ad.empty()) {
    throw Error(ErrorCode::incomplete_event, "event carries no ad features");
  }
  for (const auto& name : schema.similarity_features) {
    auto it = event.sim_bins.find(name);
    if (it == event.sim_bins.end()) continue;
    r.sim.emplace_back(table_key(name, it->second), model.sim_weight(name, it->second));
  }
  return r;
}

// Offset of feature i's block reserved for feature j inside a d-vector.
std::size_t pair_block(std::size_t i, std::size_t j, std::size_t o) {
  return (j < i ? j : j - 1) * o;
}

struct Layout {
  std::size_t k, o, s, d, full, pairs;
  explicit Layout(const ModelState& m)
      : k(m.schema().user_features.size()),
        o(m.schema().pair_width),
        s(m.schema().solo_width),
        d(m.dims().user),
        full(m.dims().full),
        pairs(k * (k - 1) / 2) {}
  std::size_t solo_in_feature() const { return (k - 1) * o; }
  std::size_t solo_out(std::size_t f) const { return pairs * o + f * s; }
};

std::vector<double> aggregate(const std::vector<ResolvedValue>& values, std::size_t d) {
  std::vector<double> out(d, 0.0);
  const double norm = 1.0 / std::sqrt(static_cast<double>(values.size()));
  for (const auto& rv : values) {
    const double w = rv.weight * norm;
    for (std::size_t t = 0; t < d; ++t) out[t] += w * rv.vec[t];
  }
  return out;
}

std::vector<double> combine_user(const std::vector<std::vector<double>>& agg, const Layout& L) {
  std::vector<double> user(L.full, 0.0);
  std::size_t p = 0;
  for (std::size_t i = 0; i < L.k; ++i) {
    for (std::size_t j = i + 1; j < L.k; ++j, ++p) {
      const std::size_t bi = pair_block(i, j, L.o);
      const std::size_t bj = pair_block(j, i, L.o);
      for (std::size_t t = 0; t < L.o; ++t) user[p * L.o + t] = agg[i][bi + t] * agg[j][bj + t];
    }
  }
  for (std::size_t f = 0; f < L.k; ++f) {
    for (std::size_t t = 0; t < L.s; ++t) user[L.solo_out(f) + t] = agg[f][L.solo_in_feature() + t];
  }
  return user;
}

struct Forward {
  std::vector<std::vector<double>> agg;
  std::vector<double> user;
  std::vector<double> ad;
  double score = 0.0;
};

Forward forward(const Resolved& r, const ModelState& model) {
  const Layout L(model);
  Forward f;
  f.agg.reserve(L.k);
  for (const auto& values : r.user) f.agg.push_back(aggregate(values, L.d));
  f.user = combine_user(f.agg, L);
  f.ad.assign(L.full, 0.0);
  for (const auto& rv : r.ad) {
    for (std::size_t t = 0; t < L.full; ++t) f.ad[t] += rv.vec[t];
  }
  double dot = 0.0;
  for (std::size_t t = 0; t < L.full; ++t) dot += f.user[t] * f.ad[t];
  f.score = model.bias.value + dot;
  for (const auto& [_, w] : r.sim) f.score += w;
  return f;
}

}  // namespace

std::vector<double> ad_vector_of(const ModelState& model, const std::map<std::string, std::string>& ad_values) {
  const std::size_t full = model.dims().full;
  std::vector<double> ad(full, 0.0);
  std::vector<double> scratch;
  bool any = false;
  for (const auto& name : model.schema().ad_features) {
    auto it = ad_values.find(name);
    if (it == ad_values.end()) continue;
    any = true;
    auto v = model.ad_table.view(name, it->second, scratch);
    for (std::size_t t = 0; t < full; ++t) ad[t] += v[t];
  }
  if (!any) throw Error(ErrorCode::incomplete_event, "event carries no ad features");
  return ad;
}

double score_from_vectors(const ModelState& model, std::span<const double> user, std::span<const double> ad,
                          const std::map<std::string, std::string>& sim_bins) {
  double dot = 0.0;
  for (std::size_t t = 0; t < user.size(); ++t) dot += user[t] * ad[t];
  double s = model.bias.value + dot;
  for (const auto& name : model.schema().similarity_features) {
    auto it = sim_bins.find(name);
    if (it != sim_bins.end()) s += model.sim_weight(name, it->second);
  }
  return s;
}

namespace {

// -log p(y | score), computed without forming p.
double log_loss_from_score(double s, int y) {
  const double softplus = s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
  return softplus - y * s;
}

void check_label(int label) {
  if (label != 0 && label != 1) {
    throw Error(ErrorCode::invalid_event, "label must be 0 or 1, got " + std::to_string(label));
  }
}

struct KeyedGrad {
  std::string key;
  std::vector<double> grad;
};

struct Backward {
  double bias = 0.0;
  std::vector<KeyedGrad> user;
  std::vector<KeyedGrad> ad;
  std::vector<std::pair<std::string, double>> sim;
};

Backward backward(const Resolved& r, const Forward& f, const ModelState& model, int label) {
  const Layout L(model);
  const double lambda = model.hyper().lambda;
  const double p = sigmoid(f.score);
  const double gs = p - label;

  Backward b;
  b.bias = gs + lambda * model.bias.value;

  // d loss / d aggregated feature vectors
  std::vector<std::vector<double>> gagg(L.k, std::vector<double>(L.d, 0.0));
  std::size_t pi = 0;
  for (std::size_t i = 0; i < L.k; ++i) {
    for (std::size_t j = i + 1; j < L.k; ++j, ++pi) {
      const std::size_t bi = pair_block(i, j, L.o);
      const std::size_t bj = pair_block(j, i, L.o);
      for (std::size_t t = 0; t < L.o; ++t) {
        const double gu = gs * f.ad[pi * L.o + t];
        gagg[i][bi + t] += gu * f.agg[j][bj + t];
        gagg[j][bj + t] += gu * f.agg[i][bi + t];
      }
    }
  }
  for (std::size_t k = 0; k < L.k; ++k) {
    for (std::size_t t = 0; t < L.s; ++t) gagg[k][L.solo_in_feature() + t] = gs * f.ad[L.solo_out(k) + t];
  }

  for (std::size_t k = 0; k < L.k; ++k) {
    const auto& values = r.user[k];
    const double norm = 1.0 / std::sqrt(static_cast<double>(values.size()));
    const std::size_t first = b.user.size();
    for (const auto& rv : values) {
      KeyedGrad* slot = nullptr;
      for (std::size_t q = first; q < b.user.size(); ++q) {
        if (b.user[q].key == rv.key) slot = &b.user[q];
      }
      if (!slot) {
        b.user.push_back({rv.key, std::vector<double>(L.d, 0.0)});
        slot = &b.user.back();
        for (std::size_t t = 0; t < L.d; ++t) slot->grad[t] = lambda * rv.vec[t];
      }
      const double w = rv.weight * norm;
      for (std::size_t t = 0; t < L.d; ++t) slot->grad[t] += w * gagg[k][t];
    }
  }

  for (const auto& rv : r.ad) {
    KeyedGrad g{rv.key, std::vector<double>(L.full)};
    for (std::size_t t = 0; t < L.full; ++t) g.grad[t] = gs * f.user[t] + lambda * rv.vec[t];
    b.ad.push_back(std::move(g));
  }
  for (const auto& [key, w] : r.sim) b.sim.emplace_back(key, gs + lambda * w);
  return b;
}

void materialize(const Event& event, ModelState& model) {
  const auto& schema = model.schema();
  for (const auto& name : schema.user_features) {
    auto it = event.user_values.find(name);
    if (it == event.user_values.end()) continue;
    for (const auto& wv : it->second) model.user_table.get_or_init(name, wv.value);
  }
  for (const auto& name : schema.ad_features) {
    auto it = event.ad_values.find(name);
    if (it != event.ad_values.end()) model.ad_table.get_or_init(name, it->second);
  }
  for (const auto& name : schema.similarity_features) {
    auto it = event.sim_bins.find(name);
    if (it != event.sim_bins.end()) model.sim_weights.try_emplace(table_key(name, it->second));
  }
}

inline void adagrad(double& value, double& acc, double g, const Hyperparams& h) {
  acc += g * g;
  value -= h.eta0 / std::sqrt(acc + h.epsilon) * g;
}

}  // namespace

std::vector<double> aggregate_feature(std::span<const WeightedValue> values, const LatentTable& table,
                                      std::string_view feature) {
  if (values.empty()) {
    throw Error(ErrorCode::invalid_event, "feature '" + std::string(feature) + "' has no values");
  }
  check_weights(values, feature);
  std::deque<std::vector<double>> scratch;
  std::vector<ResolvedValue> resolved;
  for (const auto& wv : values) {
    resolved.push_back({{}, table.view(feature, wv.value, scratch.emplace_back()), wv.weight});
  }
  return aggregate(resolved, table.dim());
}

std::vector<double> build_user_vector(const Event& event, const ModelState& model) {
  const auto r = resolve(event, model);
  const Layout L(model);
  std::vector<std::vector<double>> agg;
  for (const auto& values : r.user) agg.push_back(aggregate(values, L.d));
  return combine_user(agg, L);
}

std::vector<double> build_ad_vector(const Event& event, const ModelState& model) {
  return forward(resolve(event, model), model).ad;
}

double score(const Event& event, const ModelState& model) { return forward(resolve(event, model), model).score; }

double predict(const Event& event, const ModelState& model) { return sigmoid(score(event, model)); }

double event_loss(const Event& event, const ModelState& model) {
  check_label(event.label);
  const auto r = resolve(event, model);
  const auto f = forward(r, model);
  double reg = model.bias.value * model.bias.value;
  std::set<std::string> seen;
  for (const auto& values : r.user) {
    for (const auto& rv : values) {
      if (!seen.insert(rv.key).second) continue;
      for (double x : rv.vec) reg += x * x;
    }
  }
  for (const auto& rv : r.ad) {
    for (double x : rv.vec) reg += x * x;
  }
  for (const auto& [_, w] : r.sim) reg += w * w;
  return log_loss_from_score(f.score, event.label) + 0.5 * model.hyper().lambda * reg;
}

Gradient compute_gradient(const Event& event, const ModelState& model) {
  check_label(event.label);
  const auto r = resolve(event, model);
  const auto f = forward(r, model);
  auto b = backward(r, f, model, event.label);
  Gradient g;
  g.prediction = sigmoid(f.score);
  g.bias = b.bias;
  for (auto& kg : b.user) g.user.emplace(std::move(kg.key), std::move(kg.grad));
  for (auto& kg : b.ad) g.ad.emplace(std::move(kg.key), std::move(kg.grad));
  for (auto& [k, v] : b.sim) g.sim.emplace(std::move(k), v);
  return g;
}

double train_step(const Event& event, ModelState& model) {
  check_label(event.label);
  validate_event(event, model.schema());
  materialize(event, model);
  const auto r = resolve(event, model);
  const auto f = forward(r, model);
  const auto b = backward(r, f, model, event.label);
  const auto& h = model.hyper();

  adagrad(model.bias.value, model.bias.acc, b.bias, h);
  auto apply_vec = [&h](LatentEntry& e, const std::vector<double>& g) {
    for (std::size_t t = 0; t < g.size(); ++t) adagrad(e.value[t], e.acc[t], g[t], h);
  };
  for (const auto& kg : b.user) apply_vec(model.user_table.entries().at(kg.key), kg.grad);
  for (const auto& kg : b.ad) apply_vec(model.ad_table.entries().at(kg.key), kg.grad);
  for (const auto& [key, g] : b.sim) {
    auto& w = model.sim_weights.at(key);
    adagrad(w.value, w.acc, g, h);
  }
  return log_loss_from_score(f.score, event.label);
}

void train_batch(std::span<const Event> events, ModelState& model) {
  for (std::size_t i = 0; i < events.size(); ++i) {
    try {
      train_step(events[i], model);
    } catch (const Error& e) {
      throw Error(e.code(), "event " + std::to_string(i) + ": " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// Snapshot format
//
//   #offset-model v1
//   user_features <TAB> a,b,c
//   pair_width <TAB> o
//   solo_width <TAB> s
//   ad_features <TAB> ...
//   similarity_features <TAB> ...
//   hyper <TAB> lambda <TAB> eta0 <TAB> init_variance <TAB> epsilon <TAB> seed
//   bias <TAB> value <TAB> acc
//   u|a <TAB> feature <TAB> value <TAB> v0 v1 ... <TAB> acc0 acc1 ...
//   s <TAB> feature <TAB> bin <TAB> weight <TAB> acc
//   #end-model

namespace {

constexpr std::string_view kModelHeader = "#offset-model v1";
constexpr std::string_view kModelFooter = "#end-model";

std::string encode_vector(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += encode_double(v[i]);
  }
  return out;
}

std::vector<double> decode_vector(std::string_view s, std::size_t dim) {
  std::vector<double> out;
  if (!s.empty()) {
    for (const auto& tok : split(s, ' ')) out.push_back(decode_double(tok));
  }
  if (out.size() != dim) {
    throw Error(ErrorCode::parse, "vector of dimension " + std::to_string(out.size()) + ", expected " +
                                      std::to_string(dim));
  }
  return out;
}

std::pair<std::string, std::string> split_key(const std::string& key) {
  auto pos = key.find('\x1f');
  return {key.substr(0, pos), key.substr(pos + 1)};
}

void write_table(std::ostream& out, char tag, const LatentTable& table) {
  for (const auto& key : table.sorted_keys()) {
    const auto& e = table.entries().at(key);
    auto [feature, value] = split_key(key);
    out << tag << '\t' << feature << '\t' << value << '\t' << encode_vector(e.value) << '\t'
        << encode_vector(e.acc) << '\n';
  }
}

std::vector<std::string> list_field(const std::string& s) {
  if (s.empty()) return {};
  return split(s, ',');
}

}  // namespace

void save_model(const ModelState& model, std::ostream& out) {
  const auto& s = model.schema();
  const auto& h = model.hyper();
  out << kModelHeader << '\n';
  out << "user_features\t" << join(s.user_features, ',') << '\n';
  out << "pair_width\t" << s.pair_width << '\n';
  out << "solo_width\t" << s.solo_width << '\n';
  out << "ad_features\t" << join(s.ad_features, ',') << '\n';
  out << "similarity_features\t" << join(s.similarity_features, ',') << '\n';
  out << "hyper\t" << encode_double(h.lambda) << '\t' << encode_double(h.eta0) << '\t'
      << encode_double(h.init_variance) << '\t' << encode_double(h.epsilon) << '\t' << h.seed << '\n';
  out << "bias\t" << encode_double(model.bias.value) << '\t' << encode_double(model.bias.acc) << '\n';
  write_table(out, 'u', model.user_table);
  write_table(out, 'a', model.ad_table);
  std::vector<std::string> sim_keys;
  for (const auto& [k, _] : model.sim_weights) sim_keys.push_back(k);
  std::sort(sim_keys.begin(), sim_keys.end());
  for (const auto& key : sim_keys) {
    const auto& w = model.sim_weights.at(key);
    auto [feature, bin] = split_key(key);
    out << "s\t" << feature << '\t' << bin << '\t' << encode_double(w.value) << '\t' << encode_double(w.acc)
        << '\n';
  }
  out << kModelFooter << '\n';
}

ModelState load_model(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kModelHeader) {
    throw Error(ErrorCode::parse, "not an offset model snapshot (bad header)");
  }
  std::map<std::string, std::vector<std::string>> header;
  std::vector<std::vector<std::string>> rows;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == kModelFooter) {
      ended = true;
      break;
    }
    auto cols = split(line, '\t');
    if (cols[0] == "u" || cols[0] == "a" || cols[0] == "s") {
      rows.push_back(std::move(cols));
    } else {
      auto name = cols[0];
      cols.erase(cols.begin());
      header[name] = std::move(cols);
    }
  }
  if (!ended) throw Error(ErrorCode::parse, "truncated model snapshot");
  auto field = [&](const std::string& name, std::size_t arity) -> const std::vector<std::string>& {
    auto it = header.find(name);
    if (it == header.end() || it->second.size() != arity) {
      throw Error(ErrorCode::parse, "model snapshot missing or malformed '" + name + "'");
    }
    return it->second;
  };

  FeatureSchema schema;
  schema.user_features = list_field(field("user_features", 1)[0]);
  schema.pair_width = static_cast<std::size_t>(parse_int(field("pair_width", 1)[0], "pair_width"));
  schema.solo_width = static_cast<std::size_t>(parse_int(field("solo_width", 1)[0], "solo_width"));
  schema.ad_features = list_field(field("ad_features", 1)[0]);
  schema.similarity_features = list_field(field("similarity_features", 1)[0]);
  const auto& hf = field("hyper", 5);
  Hyperparams h;
  h.lambda = decode_double(hf[0]);
  h.eta0 = decode_double(hf[1]);
  h.init_variance = decode_double(hf[2]);
  h.epsilon = decode_double(hf[3]);
  h.seed = std::stoull(hf[4]);

  ModelState model(std::move(schema), h);
  const auto& bf = field("bias", 2);
  model.bias = {decode_double(bf[0]), decode_double(bf[1])};
  for (const auto& cols : rows) {
    if (cols[0] == "s") {
      if (cols.size() != 5) throw Error(ErrorCode::parse, "malformed similarity row");
      model.sim_weights[table_key(cols[1], cols[2])] = {decode_double(cols[3]), decode_double(cols[4])};
      continue;
    }
    if (cols.size() != 5) throw Error(ErrorCode::parse, "malformed vector row");
    auto& table = cols[0] == "u" ? model.user_table : model.ad_table;
    LatentEntry e{decode_vector(cols[3], table.dim()), decode_vector(cols[4], table.dim())};
    table.entries()[table_key(cols[1], cols[2])] = std::move(e);
  }
  return model;
}

void save_model_file(const ModelState& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  save_model(model, out);
}

ModelState load_model_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot read " + path);
  return load_model(in);
}

}  // namespace dpa::offset
