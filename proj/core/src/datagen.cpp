#include "timely/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "timely/errors.hpp"
#include "timely/rng.hpp"

namespace timely {

using nlohmann::json;

std::string_view to_string(TrendKind k) {
  switch (k) {
    case TrendKind::kNone: return "none";
    case TrendKind::kLinear: return "linear";
    case TrendKind::kLogistic: return "logistic";
    case TrendKind::kPiecewise: return "piecewise";
  }
  return "none";
}

TrendKind parse_trend_kind(std::string_view name) {
  if (name == "none") return TrendKind::kNone;
  if (name == "linear") return TrendKind::kLinear;
  if (name == "logistic") return TrendKind::kLogistic;
  if (name == "piecewise") return TrendKind::kPiecewise;
  throw ConfigError("unknown trend kind '" + std::string(name) + "'");
}

namespace {

template <class T>
void get_if(const json& j, const char* key, T& out, const char* section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid value for ") + section + "." + key + ": " + e.what());
  }
}

void reject_unknown(const json& j, const std::vector<std::string>& known, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown field " + std::string(section) + "." + key);
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Signals

void SignalSpec::validate() const {
  if (trend == TrendKind::kNone && seasonal.empty()) throw ConfigError("signal needs a trend or a seasonal component");
  if (!(noise >= 0.0)) throw ConfigError("signal.noise must be >= 0");
  if (variates == 0 || length == 0 || count == 0) throw ConfigError("signal variates, length and count must be positive");
  for (const auto& s : seasonal)
    if (!(s.period > 0.0)) throw ConfigError("seasonal period must be positive");
  if (trend == TrendKind::kPiecewise && piecewise_segments == 0) throw ConfigError("piecewise trend needs segments");
  if (!(trend_jitter >= 0.0)) throw ConfigError("signal.trend_jitter must be >= 0");
}

json SignalSpec::to_json() const {
  json s = json::array();
  for (const auto& c : seasonal) s.push_back({{"amplitude", c.amplitude}, {"period", c.period}, {"phase", c.phase}});
  return {{"trend", std::string(to_string(trend))},
          {"trend_scale", trend_scale},
          {"intercept", intercept},
          {"logistic_rate", logistic_rate},
          {"piecewise_segments", piecewise_segments},
          {"seasonal", s},
          {"noise", noise},
          {"variates", variates},
          {"length", length},
          {"count", count},
          {"randomize_phase", randomize_phase},
          {"trend_jitter", trend_jitter},
          {"seed", seed}};
}

SignalSpec SignalSpec::from_json(const json& j) {
  reject_unknown(j,
                 {"trend", "trend_scale", "intercept", "logistic_rate", "piecewise_segments", "seasonal", "noise",
                  "variates", "length", "count", "randomize_phase", "trend_jitter", "seed"},
                 "signal");
  SignalSpec s;
  std::string trend;
  if (j.contains("trend")) {
    get_if(j, "trend", trend, "signal");
    s.trend = parse_trend_kind(trend);
  }
  get_if(j, "trend_scale", s.trend_scale, "signal");
  get_if(j, "intercept", s.intercept, "signal");
  get_if(j, "logistic_rate", s.logistic_rate, "signal");
  get_if(j, "piecewise_segments", s.piecewise_segments, "signal");
  if (j.contains("seasonal")) {
    if (!j.at("seasonal").is_array()) throw ConfigError("signal.seasonal must be an array");
    s.seasonal.clear();
    for (const auto& c : j.at("seasonal")) {
      reject_unknown(c, {"amplitude", "period", "phase"}, "signal.seasonal[]");
      SeasonalComponent comp;
      get_if(c, "amplitude", comp.amplitude, "signal.seasonal[]");
      get_if(c, "period", comp.period, "signal.seasonal[]");
      get_if(c, "phase", comp.phase, "signal.seasonal[]");
      s.seasonal.push_back(comp);
    }
  }
  get_if(j, "noise", s.noise, "signal");
  get_if(j, "variates", s.variates, "signal");
  get_if(j, "length", s.length, "signal");
  get_if(j, "count", s.count, "signal");
  get_if(j, "randomize_phase", s.randomize_phase, "signal");
  get_if(j, "trend_jitter", s.trend_jitter, "signal");
  get_if(j, "seed", s.seed, "signal");
  s.validate();
  return s;
}

SignalData gen_signal(const SignalSpec& spec) {
  spec.validate();
  const std::size_t n = spec.count, t_len = spec.length, v_dim = spec.variates;
  SignalData out;
  const Shape shape{n, t_len, v_dim};
  out.trend = NdArray(shape);
  out.seasonal = NdArray(shape);
  out.noise = NdArray(shape);
  const Rng root(spec.seed);
  const double len = static_cast<double>(t_len);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t v = 0; v < v_dim; ++v) {
      Rng rng = root.fork(i * v_dim + v);
      const double scale = spec.trend_scale * (1.0 + spec.trend_jitter * (2.0 * rng.uniform() - 1.0));
      const double shift = spec.randomize_phase ? rng.uniform(0.0, 2.0 * std::numbers::pi) : 0.0;
      std::vector<double> slopes;
      if (spec.trend == TrendKind::kPiecewise) {
        for (std::size_t k = 0; k < spec.piecewise_segments; ++k) slopes.push_back(rng.uniform(-1.0, 1.0));
      }
      for (std::size_t t = 0; t < t_len; ++t) {
        const double u = static_cast<double>(t) / len;
        double trend = 0.0;
        switch (spec.trend) {
          case TrendKind::kNone: break;
          case TrendKind::kLinear: trend = spec.intercept + scale * u; break;
          case TrendKind::kLogistic:
            trend = spec.intercept + scale / (1.0 + std::exp(-spec.logistic_rate * (u - 0.5)));
            break;
          case TrendKind::kPiecewise: {
            const double seg = 1.0 / static_cast<double>(slopes.size());
            double acc = spec.intercept;
            for (std::size_t k = 0; k < slopes.size(); ++k) {
              const double lo = seg * static_cast<double>(k);
              if (u <= lo) break;
              acc += scale * slopes[k] * (std::min(u, lo + seg) - lo) / seg;
            }
            trend = acc;
            break;
          }
        }
        double seasonal = 0.0;
        for (const auto& c : spec.seasonal) {
          seasonal += c.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / c.period + c.phase + shift);
        }
        const std::size_t idx = (i * t_len + t) * v_dim + v;
        out.trend[idx] = trend;
        out.seasonal[idx] = seasonal;
        out.noise[idx] = spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0;
      }
    }
  }
  out.batch.values = NdArray(shape);
  for (std::size_t k = 0; k < out.batch.values.size(); ++k) {
    out.batch.values[k] = out.trend[k] + out.seasonal[k] + out.noise[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cohorts

void EventCohortSpec::validate() const {
  if (vocab < 1 || classes < 1 || subjects < 1) throw ConfigError("cohort vocab, classes and subjects must be positive");
  if (vocab < classes) throw ConfigError("cohort.vocab must be >= cohort.classes");
  if (min_events < 10) throw ConfigError("cohort.min_events must be >= 10");
  if (max_events < min_events) throw ConfigError("cohort.max_events must be >= min_events");
  if (!(code_signal >= 0.0 && code_signal <= 1.0)) throw ConfigError("cohort.code_signal must lie in [0, 1]");
  if (gap_ranges.size() != classes) throw ConfigError("cohort.gap_ranges needs one [lo, hi] pair per class");
  for (const auto& [lo, hi] : gap_ranges)
    if (lo < 0 || hi < lo) throw ConfigError("cohort gap range must satisfy 0 <= lo <= hi");
  if (max_start < 1) throw ConfigError("cohort.max_start must be >= 1");
}

json EventCohortSpec::to_json() const {
  json g = json::array();
  for (const auto& [lo, hi] : gap_ranges) g.push_back({lo, hi});
  return {{"vocab", vocab},         {"subjects", subjects},       {"classes", classes},
          {"min_events", min_events}, {"max_events", max_events}, {"code_signal", code_signal},
          {"gap_ranges", g},        {"max_start", max_start},     {"seed", seed}};
}

EventCohortSpec EventCohortSpec::from_json(const json& j) {
  reject_unknown(j,
                 {"vocab", "subjects", "classes", "min_events", "max_events", "code_signal", "gap_ranges",
                  "max_start", "seed"},
                 "cohort");
  EventCohortSpec s;
  get_if(j, "vocab", s.vocab, "cohort");
  get_if(j, "subjects", s.subjects, "cohort");
  get_if(j, "classes", s.classes, "cohort");
  get_if(j, "min_events", s.min_events, "cohort");
  get_if(j, "max_events", s.max_events, "cohort");
  get_if(j, "code_signal", s.code_signal, "cohort");
  get_if(j, "gap_ranges", s.gap_ranges, "cohort");
  get_if(j, "max_start", s.max_start, "cohort");
  get_if(j, "seed", s.seed, "cohort");
  if (!j.contains("gap_ranges")) s.gap_ranges.assign(s.classes, {1, 3});
  s.validate();
  return s;
}

double EventCohortSpec::log_code_prob(std::size_t cls, std::int64_t code) const {
  std::size_t members = 0;
  for (std::size_t c = 0; c < vocab; ++c) members += c % classes == cls;
  const bool in = static_cast<std::size_t>(code) % classes == cls;
  const double p = (1.0 - code_signal) / static_cast<double>(vocab) + (in ? code_signal / static_cast<double>(members) : 0.0);
  return p > 0.0 ? std::log(p) : -INFINITY;
}

double EventCohortSpec::log_gap_prob(std::size_t cls, std::int64_t gap) const {
  const auto [lo, hi] = gap_ranges[cls];
  if (gap < lo || gap > hi) return -INFINITY;
  return -std::log(static_cast<double>(hi - lo + 1));
}

namespace {

std::int64_t draw_code(const EventCohortSpec& spec, std::size_t cls, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t c = 0; c < spec.vocab; ++c) {
    acc += std::exp(spec.log_code_prob(cls, static_cast<std::int64_t>(c)));
    if (u < acc) return static_cast<std::int64_t>(c);
  }
  // Rounding left a sliver above the cumulative sum: take the last code with mass.
  for (std::size_t c = spec.vocab; c-- > 0;)
    if (std::isfinite(spec.log_code_prob(cls, static_cast<std::int64_t>(c)))) return static_cast<std::int64_t>(c);
  return 0;
}

}  // namespace

SequenceBatch make_event_batch(const std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>>& events,
                               std::size_t vocab) {
  if (events.empty()) throw InputError("event batch with no subjects");
  std::size_t t_max = 0;
  for (const auto& e : events) {
    if (e.empty()) throw InputError("subject without events");
    t_max = std::max(t_max, e.size());
  }
  SequenceBatch b;
  b.values = NdArray(Shape{events.size(), t_max, vocab});
  for (std::size_t r = 0; r < events.size(); ++r) {
    std::vector<std::int64_t> codes, ts;
    for (std::size_t i = 0; i < events[r].size(); ++i) {
      const auto [code, t] = events[r][i];
      if (code < 0 || static_cast<std::size_t>(code) >= vocab) {
        throw InputError("event code " + std::to_string(code) + " outside vocabulary of " + std::to_string(vocab));
      }
      if (!ts.empty() && t < ts.back()) throw InputError("event timestamps must be non-decreasing");
      b.values[(r * t_max + i) * vocab + static_cast<std::size_t>(code)] = 1.0;
      codes.push_back(code);
      ts.push_back(t);
    }
    b.lengths.push_back(events[r].size());
    while (ts.size() < t_max) ts.push_back(ts.back());
    b.timestamps.push_back(std::move(ts));
    b.codes.push_back(std::move(codes));
  }
  return b;
}

Cohort gen_cohort(const EventCohortSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> events(spec.subjects);
  Cohort out;
  for (std::size_t i = 0; i < spec.subjects; ++i) {
    Rng rng = root.fork(i);
    const std::size_t cls = i % spec.classes;
    const std::size_t count = spec.min_events + rng.below(spec.max_events - spec.min_events + 1);
    std::int64_t t = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(spec.max_start)));
    const auto [lo, hi] = spec.gap_ranges[cls];
    for (std::size_t k = 0; k < count; ++k) {
      if (k > 0) t += lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
      events[i].emplace_back(draw_code(spec, cls, rng), t);
    }
    out.labels.push_back(static_cast<double>(cls));
    out.ids.push_back("s" + std::to_string(i));
  }
  out.batch = make_event_batch(events, spec.vocab);
  return out;
}

std::vector<std::int64_t> bayes_predictions(const EventCohortSpec& spec, const SequenceBatch& batch) {
  std::vector<std::int64_t> pred;
  for (std::size_t r = 0; r < batch.batch(); ++r) {
    const std::size_t n = batch.length(r);
    double best = -INFINITY;
    std::int64_t arg = 0;
    for (std::size_t c = 0; c < spec.classes; ++c) {
      double ll = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        ll += spec.log_code_prob(c, batch.codes[r][i]);
        if (i > 0) ll += spec.log_gap_prob(c, batch.timestamps[r][i] - batch.timestamps[r][i - 1]);
      }
      if (ll > best) {
        best = ll;
        arg = static_cast<std::int64_t>(c);
      }
    }
    pred.push_back(arg);
  }
  return pred;
}

double bayes_accuracy(const EventCohortSpec& spec, const SequenceBatch& batch, const std::vector<double>& labels) {
  const auto pred = bayes_predictions(spec, batch);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == static_cast<std::int64_t>(labels[i]);
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Splits

Split split(std::size_t n, const std::vector<double>& fractions, std::uint64_t seed) {
  if (fractions.size() != 3) throw InputError("split needs train/valid/test fractions");
  const double total = std::accumulate(fractions.begin(), fractions.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw InputError("split fractions must sum to 1");
  for (double f : fractions)
    if (f < 0.0) throw InputError("split fractions must be non-negative");
  std::vector<std::size_t> sizes(3);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = fractions[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += sizes[k];
    rem.emplace_back(exact - static_cast<double>(sizes[k]), k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; used < n; ++k, ++used) ++sizes[rem[k % 3].second];
  for (std::size_t s : sizes)
    if (s == 0) throw InputError("split of " + std::to_string(n) + " items leaves an empty part");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, 0x5157);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
  s.valid.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                 order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), order.end());
  return s;
}

std::vector<std::size_t> subset(const std::vector<std::size_t>& rows, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("subset fraction must lie in (0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(rows.size()) - 1e-9));
  if (k == 0) throw InputError("subset is empty");
  std::vector<std::size_t> order = rows;
  Rng rng(seed, 0x5ab5);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

// ---------------------------------------------------------------------------
// Files

void write_signal_csv(const std::filesystem::path& path, const SequenceBatch& batch) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  const std::size_t v = batch.variates();
  os << 't';
  for (std::size_t c = 0; c < v; ++c) os << ",v" << c + 1;
  os << '\n';
  char buf[32];
  for (std::size_t r = 0; r < batch.batch(); ++r) {
    for (std::size_t t = 0; t < batch.length(r); ++t) {
      os << t;
      for (std::size_t c = 0; c < v; ++c) {
        std::snprintf(buf, sizeof(buf), "%.17g", batch.values[(r * batch.steps() + t) * v + c]);
        os << ',' << buf;
      }
      os << '\n';
    }
  }
}

SequenceBatch read_signal_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("t", 0) != 0) throw InputError(path.string() + ": missing t,v1..vV header");
  const auto v = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (v == 0) throw InputError(path.string() + ": no value columns");
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> cells;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        cells.push_back(std::stod(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw InputError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (cells.size() != v + 1) throw InputError(path.string() + ":" + std::to_string(line_no) + ": wrong column count");
    const auto t = static_cast<std::size_t>(cells[0]);
    if (t == 0) rows.emplace_back();
    if (rows.empty() || rows.back().size() != t * v) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": t must restart at 0 and count up by 1");
    }
    rows.back().insert(rows.back().end(), cells.begin() + 1, cells.end());
  }
  if (rows.empty()) throw InputError(path.string() + ": no data rows");
  std::size_t t_max = 0;
  for (const auto& r : rows) t_max = std::max(t_max, r.size() / v);
  SequenceBatch b;
  b.values = NdArray(Shape{rows.size(), t_max, v});
  bool ragged = false;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(rows[r].begin(), rows[r].end(), b.values.raw() + r * t_max * v);
    b.lengths.push_back(rows[r].size() / v);
    ragged |= b.lengths.back() != t_max;
  }
  if (!ragged) b.lengths.clear();
  return b;
}

void write_cohort_jsonl(const std::filesystem::path& path, const Cohort& cohort) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw InputError("cannot write " + path.string());
  const SequenceBatch& b = cohort.batch;
  for (std::size_t r = 0; r < b.batch(); ++r) {
    json ev = json::array();
    for (std::size_t i = 0; i < b.length(r); ++i) ev.push_back({b.codes[r][i], b.timestamps[r][i]});
    json line = {{"id", r < cohort.ids.size() ? cohort.ids[r] : std::to_string(r)}, {"events", ev}};
    if (r < cohort.labels.size()) line["label"] = static_cast<std::int64_t>(cohort.labels[r]);
    os << line.dump() << '\n';
  }
}

Cohort read_cohort_jsonl(const std::filesystem::path& path, std::size_t vocab) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path.string());
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> events;
  Cohort out;
  std::string line;
  std::size_t line_no = 0;
  std::int64_t max_code = -1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.ids.push_back(j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump());
      std::vector<std::pair<std::int64_t, std::int64_t>> ev;
      for (const auto& e : j.at("events")) {
        ev.emplace_back(e.at(0).get<std::int64_t>(), e.at(1).get<std::int64_t>());
        max_code = std::max(max_code, ev.back().first);
      }
      events.push_back(std::move(ev));
      if (j.contains("label")) out.labels.push_back(j.at("label").get<double>());
    } catch (const json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!out.labels.empty() && out.labels.size() != events.size()) throw InputError(path.string() + ": some subjects lack labels");
  if (vocab == 0) vocab = static_cast<std::size_t>(max_code + 1);
  out.batch = make_event_batch(events, vocab);
  return out;
}

}  // namespace timely
