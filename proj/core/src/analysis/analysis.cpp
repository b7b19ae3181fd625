#include "chartlab/analysis/analysis.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <unordered_map>

#include "chartlab/numerics/adam.hpp"
#include "chartlab/util/digest.hpp"
#include "chartlab/util/error.hpp"
#include "chartlab/util/parallel.hpp"
#include "chartlab/util/rng.hpp"

namespace chartlab::analysis {

namespace {

using nlohmann::json;
using num::Tape;
using num::Var;

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits) {
  if (std::abs(v) < 0.5 * std::pow(10.0, -digits)) v = 0.0;  // no "-0.0"
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string hidden_name(std::size_t i, const char* what) { return "l" + std::to_string(i) + "." + what; }

Tensor normal_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::matrix(rows, cols);
  const double sd = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& v : t.data()) v = sd * rng.normal();
  return t;
}

Var forward(Tape& t, const ParamSet& p, const ProbeConfig& c, Var x) {
  Var h = x;
  if (c.kind == ProbeKind::mlp) {
    for (std::size_t i = 0; i < c.hidden.size(); ++i) {
      h = t.add_row(t.matmul(h, t.param(p, hidden_name(i, "w"))), t.param(p, hidden_name(i, "b")));
      if (c.activation == Activation::relu) h = t.relu(h);
      if (c.activation == Activation::tanh) h = t.tanh(h);
    }
  }
  return t.add_row(t.matmul(h, t.param(p, "out.w")), t.param(p, "out.b"));
}

Tensor standardized(const ProbeModel& m, const Tensor& x) {
  Tensor out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = (row[k] - m.mean[k]) / m.scale[k];
  }
  return out;
}

Tensor rows_of(const Tensor& x, const std::vector<std::size_t>& idx) {
  Tensor out = Tensor::matrix(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy(x.row(idx[i]).begin(), x.row(idx[i]).end(), out.row(i).begin());
  return out;
}

std::vector<std::size_t> pick(const std::vector<std::size_t>& v, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, std::optional<double>>> points;
};

const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

// Line plot with y fixed to [0, 1]. Missing y values break the line.
std::string line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                      const std::vector<PlotSeries>& series) {
  constexpr double W = 480, H = 320, L = 56, R = 140, T = 32, B = 44;
  double x_min = 0, x_max = 1;
  bool any = false;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      x_min = any ? std::min(x_min, x) : x;
      x_max = any ? std::max(x_max, x) : x;
      any = true;
    }
  }
  if (!any || x_max == x_min) {
    x_min = any ? x_min - 0.5 : 0.0;
    x_max = any ? x_max + 0.5 : 1.0;
  }
  auto px = [&](double x) { return L + (x - x_min) / (x_max - x_min) * (W - L - R); };
  auto py = [&](double y) { return T + (1.0 - y) * (H - T - B); };

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"320\" viewBox=\"0 0 480 320\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"480\" height=\"320\" fill=\"white\"/>\n";
  s += "<text x=\"" + fixed(W / 2 - R / 2 + L / 2, 1) + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">" +
       xml_escape(title) + "</text>\n";
  s += "<g stroke=\"black\" stroke-width=\"1\">\n";
  s += "<line x1=\"" + fixed(L, 1) + "\" y1=\"" + fixed(py(0), 1) + "\" x2=\"" + fixed(W - R, 1) + "\" y2=\"" +
       fixed(py(0), 1) + "\"/>\n";
  s += "<line x1=\"" + fixed(L, 1) + "\" y1=\"" + fixed(py(0), 1) + "\" x2=\"" + fixed(L, 1) + "\" y2=\"" +
       fixed(py(1), 1) + "\"/>\n";
  s += "</g>\n";
  s += "<g font-family=\"sans-serif\" font-size=\"10\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = i / 4.0;
    s += "<line x1=\"" + fixed(L - 4, 1) + "\" y1=\"" + fixed(py(y), 1) + "\" x2=\"" + fixed(L, 1) + "\" y2=\"" +
         fixed(py(y), 1) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fixed(L - 6, 1) + "\" y=\"" + fixed(py(y) + 3, 1) + "\" text-anchor=\"end\">" + fixed(y, 2) +
         "</text>\n";
  }
  std::set<double> xs;
  for (const auto& ser : series)
    for (const auto& [x, y] : ser.points) xs.insert(x);
  for (double x : xs) {
    s += "<line x1=\"" + fixed(px(x), 1) + "\" y1=\"" + fixed(py(0), 1) + "\" x2=\"" + fixed(px(x), 1) + "\" y2=\"" +
         fixed(py(0) + 4, 1) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fixed(px(x), 1) + "\" y=\"" + fixed(py(0) + 15, 1) + "\" text-anchor=\"middle\">" + g17(x) +
         "</text>\n";
  }
  s += "<text x=\"" + fixed((L + W - R) / 2, 1) + "\" y=\"" + fixed(H - 8, 1) + "\" text-anchor=\"middle\">" +
       xml_escape(x_label) + "</text>\n";
  s += "<text x=\"14\" y=\"" + fixed((T + H - B) / 2, 1) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       fixed((T + H - B) / 2, 1) + ")\">" + xml_escape(y_label) + "</text>\n";
  s += "</g>\n";

  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % std::size(kColors)];
    const auto& ser = series[i];
    std::string pts;
    auto flush = [&] {
      if (!pts.empty()) {
        s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
      }
      pts.clear();
    };
    for (const auto& [x, y] : ser.points) {
      if (!y) {
        flush();
        continue;
      }
      if (!pts.empty()) pts += " ";
      pts += fixed(px(x), 1) + "," + fixed(py(std::clamp(*y, 0.0, 1.0)), 1);
    }
    flush();
    for (const auto& [x, y] : ser.points) {
      if (!y) continue;
      s += "<circle cx=\"" + fixed(px(x), 1) + "\" cy=\"" + fixed(py(std::clamp(*y, 0.0, 1.0)), 1) +
           "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    const double ly = T + 14.0 + 16.0 * static_cast<double>(i);
    s += "<line x1=\"" + fixed(W - R + 12, 1) + "\" y1=\"" + fixed(ly - 4, 1) + "\" x2=\"" + fixed(W - R + 30, 1) +
         "\" y2=\"" + fixed(ly - 4, 1) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fixed(W - R + 34, 1) + "\" y=\"" + fixed(ly, 1) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + xml_escape(ser.name) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::string_view to_string(ProbeTask t) {
  switch (t) {
    case ProbeTask::count: return "count";
    case ProbeTask::parity: return "parity";
    case ProbeTask::chart_type: return "chart_type";
    case ProbeTask::series_count: return "series_count";
    case ProbeTask::value_lookup: return "value_lookup";
    case ProbeTask::title: return "title";
    case ProbeTask::title_count_xor: return "title_count_xor";
  }
  return "?";
}

ProbeTask parse_probe_task(std::string_view s) {
  for (auto t : kAllProbeTasks) {
    if (to_string(t) == s) return t;
  }
  throw ConfigError("task", "unknown probe task '" + std::string(s) + "'");
}

std::string_view to_string(ProbeKind k) { return k == ProbeKind::linear ? "linear" : "mlp"; }

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

ProbeKind parse_probe_kind(std::string_view s) {
  if (s == "linear") return ProbeKind::linear;
  if (s == "mlp") return ProbeKind::mlp;
  throw ConfigError("probe_kind", "expected 'linear' or 'mlp', got '" + std::string(s) + "'");
}

Activation parse_activation(std::string_view s) {
  for (auto a : {Activation::relu, Activation::tanh, Activation::identity}) {
    if (to_string(a) == s) return a;
  }
  throw ConfigError("activation", "expected relu, tanh or identity, got '" + std::string(s) + "'");
}

std::size_t class_count(ProbeTask task, const chartgen::GeneratorConfig& c) {
  switch (task) {
    case ProbeTask::count: return static_cast<std::size_t>(c.category_count.max - c.category_count.min + 1);
    case ProbeTask::parity: return 2;
    case ProbeTask::chart_type: return 3;
    case ProbeTask::series_count: return static_cast<std::size_t>(c.series_count.max - c.series_count.min + 1);
    case ProbeTask::value_lookup: return kValueBins;
    case ProbeTask::title: return chartgen::pools::titles().size();
    case ProbeTask::title_count_xor: return 2;
  }
  return 0;
}

std::size_t label_of(ProbeTask task, const chartgen::ChartSpec& spec, const chartgen::GeneratorConfig& c) {
  auto in_range = [&](long v, std::size_t classes) {
    if (v < 0 || static_cast<std::size_t>(v) >= classes) {
      throw ContractError("chart " + spec.chart_id + ": no " + std::string(to_string(task)) + " class for value " +
                          std::to_string(v));
    }
    return static_cast<std::size_t>(v);
  };
  const long n_cat = static_cast<long>(spec.categories.size());
  switch (task) {
    case ProbeTask::count: return in_range(n_cat - c.category_count.min, class_count(task, c));
    case ProbeTask::parity: return static_cast<std::size_t>(n_cat % 2);
    case ProbeTask::chart_type: return static_cast<std::size_t>(spec.chart_type);
    case ProbeTask::series_count:
      return in_range(static_cast<long>(spec.series.size()) - c.series_count.min, class_count(task, c));
    case ProbeTask::value_lookup: {
      if (spec.series.empty() || spec.series[0].values.empty()) {
        throw ContractError("chart " + spec.chart_id + ": no value to look up");
      }
      const double rel = (spec.series[0].values[0] - spec.y_min) / (spec.y_max - spec.y_min);
      return static_cast<std::size_t>(std::clamp(static_cast<int>(std::floor(rel * kValueBins)), 0, kValueBins - 1));
    }
    case ProbeTask::title: {
      const auto& pool = chartgen::pools::titles();
      const auto it = std::find(pool.begin(), pool.end(), spec.title);
      if (it == pool.end()) throw ContractError("chart " + spec.chart_id + ": title '" + spec.title + "' has no class");
      return static_cast<std::size_t>(it - pool.begin());
    }
    case ProbeTask::title_count_xor: {
      const bool first_half = label_of(ProbeTask::title, spec, c) < chartgen::pools::titles().size() / 2;
      return static_cast<std::size_t>(first_half != (n_cat % 2 == 1));
    }
  }
  return 0;
}

std::optional<ProbeTask> task_for(chartgen::QaKind kind) {
  if (kind == chartgen::QaKind::count) return ProbeTask::count;
  if (kind == chartgen::QaKind::title) return ProbeTask::title;
  return std::nullopt;
}

std::string FrozenEmbeddings::digest() const {
  std::string bytes(reinterpret_cast<const char*>(embeddings.raw()), embeddings.size() * sizeof(double));
  for (const auto& id : chart_ids) bytes += id + "\n";
  for (const auto& [task, l] : tasks) {
    bytes += std::string(to_string(task)) + ":" + std::to_string(l.classes) + ":";
    for (auto v : l.labels) bytes += std::to_string(v) + ",";
  }
  return sha256_hex(bytes);
}

FrozenEmbeddings extract_frozen_embeddings(const ParamSet& params, const dualenc::EncoderConfig& enc,
                                           const chartgen::Dataset& data, const chartgen::GeneratorConfig& gen,
                                           const std::vector<ProbeTask>& tasks) {
  if (data.entries.empty()) throw ContractError("extract_frozen_embeddings: dataset is empty");
  FrozenEmbeddings out;
  std::vector<const chartgen::RasterImage*> images;
  for (const auto& e : data.entries) {
    images.push_back(&e.image);
    out.chart_ids.push_back(e.spec.chart_id);
  }
  out.embeddings = dualenc::encode_image(std::span<const chartgen::RasterImage* const>(images), params, enc);
  for (auto task : tasks) {
    TaskLabels l;
    l.classes = class_count(task, gen);
    for (const auto& e : data.entries) l.labels.push_back(label_of(task, e.spec, gen));
    out.tasks[task] = std::move(l);
  }
  return out;
}

void validate(const ProbeConfig& c) {
  if (c.epochs < 1) throw ConfigError("epochs", "must be positive");
  if (!(c.learning_rate > 0.0) || !std::isfinite(c.learning_rate)) throw ConfigError("learning_rate", "must be positive");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw ConfigError("test_fraction", "must lie in (0, 1)");
  if (!(c.weight_decay >= 0.0) || !std::isfinite(c.weight_decay)) throw ConfigError("weight_decay", "must be non-negative");
  if (c.kind == ProbeKind::mlp) {
    if (c.hidden.empty()) throw ConfigError("hidden", "mlp probe needs at least one hidden layer");
    for (int h : c.hidden) {
      if (h < 1) throw ConfigError("hidden", "layer widths must be positive");
    }
  }
  if (c.freeze_identity_hidden &&
      (c.kind != ProbeKind::mlp || c.activation != Activation::identity || c.hidden.size() != 1)) {
    throw ConfigError("freeze_identity_hidden", "requires an mlp probe with one identity hidden layer");
  }
}

std::string describe(const ProbeConfig& c) {
  std::string h;
  for (int v : c.hidden) h += (h.empty() ? "" : ",") + std::to_string(v);
  return "kind=" + std::string(to_string(c.kind)) + ";hidden=" + h + ";activation=" + std::string(to_string(c.activation)) +
         ";epochs=" + std::to_string(c.epochs) + ";lr=" + g17(c.learning_rate) +
         ";weight_decay=" + g17(c.weight_decay) + ";seed=" + std::to_string(c.seed) +
         ";test_fraction=" + g17(c.test_fraction) + ";standardize=" + (c.standardize ? "1" : "0") +
         ";freeze_identity_hidden=" + (c.freeze_identity_hidden ? "1" : "0");
}

ProbeModel train_probe(const Tensor& x, const std::vector<std::size_t>& labels, std::size_t classes,
                       const ProbeConfig& c, const std::vector<int>& snapshot_steps, const ProbeSnapshotFn& on_snapshot) {
  validate(c);
  if (x.rank() != 2 || x.rows() != labels.size() || labels.empty()) {
    throw ContractError("train_probe: " + std::to_string(labels.size()) + " labels for embeddings of shape " +
                        num::shape_string(x.shape()));
  }
  if (classes < 2) throw ContractError("train_probe: a task needs at least 2 classes");
  std::set<std::size_t> seen;
  for (auto l : labels) {
    if (l >= classes) throw ContractError("train_probe: label " + std::to_string(l) + " outside " + std::to_string(classes) + " classes");
    seen.insert(l);
  }
  if (seen.size() < 2) throw ContractError("train_probe: labels are degenerate (a single class)");
  const std::size_t d = x.cols();
  if (c.freeze_identity_hidden && static_cast<std::size_t>(c.hidden[0]) != d) {
    throw ConfigError("hidden", "identity hidden layer must match the input width " + std::to_string(d));
  }

  ProbeModel m;
  m.config = c;
  m.classes = classes;
  m.mean.assign(d, 0.0);
  m.scale.assign(d, 1.0);
  if (c.standardize) {
    const double n = static_cast<double>(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t k = 0; k < d; ++k) m.mean[k] += x.at(r, k) / n;
    std::vector<double> var(d, 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t k = 0; k < d; ++k) var[k] += (x.at(r, k) - m.mean[k]) * (x.at(r, k) - m.mean[k]) / n;
    for (std::size_t k = 0; k < d; ++k) m.scale[k] = var[k] > 1e-24 ? std::sqrt(var[k]) : 1.0;
  }

  std::size_t width = d;
  if (c.kind == ProbeKind::mlp) {
    for (std::size_t i = 0; i < c.hidden.size(); ++i) {
      const auto h = static_cast<std::size_t>(c.hidden[i]);
      if (c.freeze_identity_hidden) {
        Tensor eye = Tensor::matrix(width, h);
        for (std::size_t k = 0; k < width; ++k) eye.at(k, k) = 1.0;
        m.params[hidden_name(i, "w")] = eye;
      } else {
        m.params[hidden_name(i, "w")] = normal_matrix(width, h, mix_seed(c.seed, stable_hash(hidden_name(i, "w"))));
      }
      m.params[hidden_name(i, "b")] = Tensor::matrix(1, h);
      width = h;
    }
  }
  m.params["out.w"] = normal_matrix(width, classes, mix_seed(c.seed, stable_hash("out.w")));
  m.params["out.b"] = Tensor::matrix(1, classes);

  const Tensor xs = standardized(m, x);
  num::AdamState adam;
  adam.hyper.learning_rate = c.learning_rate;
  std::set<int> snaps(snapshot_steps.begin(), snapshot_steps.end());
  for (int step = 1; step <= c.epochs; ++step) {
    Tape t;
    Var loss = t.cross_entropy_rows(forward(t, m.params, c, t.constant(xs)), labels);
    auto grads = t.backward(loss);
    if (c.freeze_identity_hidden) {
      // A missing gradient leaves Adam's moments and the weights at zero change.
      grads.erase(hidden_name(0, "w"));
      grads.erase(hidden_name(0, "b"));
    }
    if (c.weight_decay > 0.0) {
      for (auto& [name, g] : grads) {
        if (name.size() < 2 || name.compare(name.size() - 2, 2, ".w") != 0) continue;
        const auto& w = m.params.at(name);
        for (std::size_t i = 0; i < g.size(); ++i) g.raw()[i] += c.weight_decay * w.raw()[i];
      }
    }
    num::adam_update(adam, m.params, grads);
    if (on_snapshot && snaps.count(step)) on_snapshot(step, m);
  }
  return m;
}

std::vector<std::size_t> predict(const ProbeModel& m, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != m.mean.size()) {
    throw ContractError("predict: embeddings of shape " + num::shape_string(x.shape()) + ", probe expects width " +
                        std::to_string(m.mean.size()));
  }
  Tape t;
  const Tensor logits = t.value(forward(t, m.params, m.config, t.constant(standardized(m, x))));
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    out.push_back(static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels) {
  if (predicted.size() != labels.size() || labels.empty()) throw ContractError("accuracy: mismatched or empty inputs");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

Split split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction", "must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, stable_hash("probe.split")));
  rng.shuffle(order);
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(n) * test_fraction));
  if (n_test == 0 || n_test >= n) throw ContractError("split_indices: " + std::to_string(n) + " rows cannot form both splits");
  Split s;
  s.train.assign(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_test));
  s.test.assign(order.end() - static_cast<std::ptrdiff_t>(n_test), order.end());
  return s;
}

ProbeReport fit_probe(const Tensor& x, const std::vector<std::size_t>& labels, std::size_t classes, std::string_view task,
                      const ProbeConfig& c) {
  validate(c);
  if (x.rank() != 2 || x.rows() != labels.size()) throw ContractError("fit_probe: embeddings and labels disagree");
  const Split s = split_indices(labels.size(), c.test_fraction, c.seed);
  const Tensor xtr = rows_of(x, s.train), xte = rows_of(x, s.test);
  const auto ytr = pick(labels, s.train), yte = pick(labels, s.test);
  const ProbeModel m = train_probe(xtr, ytr, classes, c);
  ProbeReport r;
  r.kind = c.kind;
  r.task = task;
  r.train_accuracy = accuracy(predict(m, xtr), ytr);
  r.test_accuracy = accuracy(predict(m, xte), yte);
  r.n_train = ytr.size();
  r.n_test = yte.size();
  r.classes = classes;
  r.chance = 1.0 / static_cast<double>(classes);
  return r;
}

ProbeReport fit_linear_probe(const Tensor& x, const std::vector<std::size_t>& labels, std::size_t classes,
                             std::string_view task, ProbeConfig c) {
  c.kind = ProbeKind::linear;
  return fit_probe(x, labels, classes, task, c);
}

ProbeReport fit_mlp_probe(const Tensor& x, const std::vector<std::size_t>& labels, std::size_t classes,
                          std::string_view task, ProbeConfig c) {
  c.kind = ProbeKind::mlp;
  return fit_probe(x, labels, classes, task, c);
}

CrlaIrlaReport crla_irla(const std::vector<bool>& retrieval, const std::vector<bool>& task) {
  if (retrieval.size() != task.size()) {
    throw ContractError("crla_irla: " + std::to_string(retrieval.size()) + " retrieval outcomes vs " +
                        std::to_string(task.size()) + " task outcomes");
  }
  if (retrieval.empty()) throw ContractError("crla_irla: no samples");
  std::size_t nr = 0, cr = 0, ci = 0, total = 0;
  for (std::size_t i = 0; i < retrieval.size(); ++i) {
    total += task[i] ? 1 : 0;
    if (retrieval[i]) {
      ++nr;
      cr += task[i] ? 1 : 0;
    } else {
      ci += task[i] ? 1 : 0;
    }
  }
  const std::size_t n = retrieval.size(), ni = n - nr;
  CrlaIrlaReport r;
  r.n = n;
  r.p = static_cast<double>(nr) / static_cast<double>(n);
  if (nr > 0) r.crla = static_cast<double>(cr) / static_cast<double>(nr);
  if (ni > 0) r.irla = static_cast<double>(ci) / static_cast<double>(ni);
  r.overall = static_cast<double>(total) / static_cast<double>(n);
  return r;
}

bool total_probability_holds(const CrlaIrlaReport& r, double tol) {
  const double composed = (r.crla ? r.p * *r.crla : 0.0) + (r.irla ? (1.0 - r.p) * *r.irla : 0.0);
  return std::abs(r.overall - composed) <= tol;
}

std::vector<CrlaIrlaPoint> crla_irla_curve(const FrozenEmbeddings& train, const FrozenEmbeddings& eval,
                                           const std::vector<evalkit::InstanceResult>& retrieval,
                                           const ProbeConfig& mlp, const std::vector<int>& steps) {
  if (steps.empty()) throw ConfigError("steps", "at least one probe step is required");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i] < 1 || steps[i] > mlp.epochs || (i > 0 && steps[i] <= steps[i - 1])) {
      throw ConfigError("steps", "must be ascending within [1, " + std::to_string(mlp.epochs) + "]");
    }
  }
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < eval.chart_ids.size(); ++i) row_of.emplace(eval.chart_ids[i], i);

  std::set<ProbeTask> needed;
  for (const auto& r : retrieval) {
    if (auto t = task_for(r.kind)) needed.insert(*t);
  }
  if (needed.empty()) throw ContractError("crla_irla_curve: no retrieval instance maps to a probe task");

  // predictions[task][step index] -> per eval row
  std::map<ProbeTask, std::vector<std::vector<std::size_t>>> predictions;
  for (auto task : needed) {
    const auto tr = train.tasks.find(task);
    const auto ev = eval.tasks.find(task);
    if (tr == train.tasks.end() || ev == eval.tasks.end()) {
      throw ContractError("crla_irla_curve: embeddings lack labels for task " + std::string(to_string(task)));
    }
    auto& out = predictions[task];
    ProbeConfig c = mlp;
    c.kind = ProbeKind::mlp;
    train_probe(train.embeddings, tr->second.labels, tr->second.classes, c, steps,
                [&](int, const ProbeModel& m) { out.push_back(predict(m, eval.embeddings)); });
  }

  std::vector<CrlaIrlaPoint> curve;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    std::vector<bool> ret, ok;
    for (const auto& r : retrieval) {
      const auto task = task_for(r.kind);
      if (!task) continue;
      const auto row = row_of.find(r.chart_id);
      if (row == row_of.end()) throw ContractError("crla_irla_curve: chart " + r.chart_id + " has no embedding");
      ret.push_back(r.correct);
      ok.push_back(predictions[*task][s][row->second] == eval.tasks.at(*task).labels[row->second]);
    }
    curve.push_back({steps[s], crla_irla(ret, ok)});
  }
  return curve;
}

std::vector<std::size_t> subset_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, stable_hash("scaling.subset")));
  rng.shuffle(order);
  return order;
}

chartgen::Dataset take_subset(const chartgen::Dataset& data, const std::vector<std::size_t>& order, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fractions", "must lie in (0, 1], got " + g17(fraction));
  if (order.size() != data.entries.size()) throw ContractError("take_subset: order does not cover the dataset");
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(order.size()) + 1e-9));
  chartgen::Dataset out;
  out.split = data.split;
  out.generator_config_digest = data.generator_config_digest;
  for (std::size_t i = 0; i < count; ++i) out.entries.push_back(data.entries.at(order[i]));
  return out;
}

std::vector<ScalingPoint> scaling_curves(const chartgen::Dataset& train, const chartgen::Dataset& eval,
                                         const ScalingConfig& c, const ScalingCellFn& on_cell) {
  if (c.fractions.empty()) throw ConfigError("fractions", "at least one fraction is required");
  if (c.seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  for (std::size_t i = 0; i < c.fractions.size(); ++i) {
    const double f = c.fractions[i];
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fractions", "must lie in (0, 1], got " + g17(f));
    if (i > 0 && !(f > c.fractions[i - 1])) throw ConfigError("fractions", "must be strictly ascending");
    const auto charts = static_cast<std::size_t>(std::floor(f * static_cast<double>(train.entries.size()) + 1e-9));
    if (charts < static_cast<std::size_t>(c.training.batch_size)) {
      throw ConfigError("fractions", "fraction " + g17(f) + " gives " + std::to_string(charts) +
                                         " charts, fewer than one batch of " + std::to_string(c.training.batch_size));
    }
  }
  trainer::validate(c.training);
  dualenc::validate(c.encoder);
  const auto order = subset_order(train.entries.size(), c.subset_seed);
  const auto instances = evalkit::build_retrieval_instances(eval, c.k_eval, c.eval_seed);

  struct Cell {
    std::string variant;
    double fraction;
    std::uint64_t seed;
    int k;
  };
  std::vector<Cell> cells;
  for (const auto& [variant, k] : std::vector<std::pair<std::string, int>>{{"hard-negative", c.k_train}, {"plain", 0}}) {
    for (double f : c.fractions)
      for (auto s : c.seeds) cells.push_back({variant, f, s, k});
  }
  std::vector<ScalingPoint> out(cells.size());
  parallel_for(cells.size(), c.threads, [&](std::size_t i) {
    const Cell& cell = cells[i];
    const auto subset = take_subset(train, order, cell.fraction);
    trainer::TrainConfig tc = c.training;
    tc.k_train = cell.k;
    tc.seed = cell.seed;
    tc.max_charts = 0;
    const auto result = trainer::train(subset, c.encoder, tc, dualenc::init_params(c.encoder, cell.seed));
    const auto report = evalkit::evaluate_retrieval(result.params, c.encoder, eval, instances);
    out[i] = {cell.variant, cell.fraction, cell.seed, report.overall.accuracy(), subset.entries.size()};
    if (on_cell) on_cell(out[i], result.params);
  });
  std::sort(out.begin(), out.end(), [](const ScalingPoint& a, const ScalingPoint& b) {
    return std::tie(a.variant, a.fraction, a.seed) < std::tie(b.variant, b.fraction, b.seed);
  });
  return out;
}

std::string scaling_csv(const std::vector<ScalingPoint>& points) {
  std::string out = "variant,fraction,seed,accuracy\n";
  for (const auto& p : points) out += p.variant + "," + g17(p.fraction) + "," + std::to_string(p.seed) + "," + g17(p.accuracy) + "\n";
  return out;
}

std::string crla_irla_csv(const std::vector<CrlaIrlaPoint>& points) {
  std::string out = "checkpoint_step,p,crla,irla,overall,n\n";
  for (const auto& pt : points) {
    const auto& r = pt.report;
    out += std::to_string(pt.step) + "," + g17(r.p) + "," + (r.crla ? g17(*r.crla) : "") + "," +
           (r.irla ? g17(*r.irla) : "") + "," + g17(r.overall) + "," + std::to_string(r.n) + "\n";
  }
  return out;
}

namespace {

std::vector<std::vector<std::string>> csv_rows(std::string_view text, std::string_view header, std::size_t width) {
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line_no == 1) {
      if (line != header) throw FormatError("csv line 1: expected header '" + std::string(header) + "'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells(1);
    for (char ch : line) {
      if (ch == ',') {
        cells.emplace_back();
      } else {
        cells.back() += ch;
      }
    }
    if (cells.size() != width) {
      throw FormatError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(width) + " fields");
    }
    rows.push_back(std::move(cells));
  }
  if (line_no == 0) throw FormatError("csv: empty input");
  return rows;
}

double csv_number(const std::string& cell, std::size_t row) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (cell.empty() || used != cell.size()) {
    throw FormatError("csv line " + std::to_string(row + 2) + ": '" + cell + "' is not a number");
  }
  return v;
}

}  // namespace

std::vector<ScalingPoint> parse_scaling_csv(std::string_view text) {
  std::vector<ScalingPoint> out;
  const auto rows = csv_rows(text, "variant,fraction,seed,accuracy", 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ScalingPoint p;
    p.variant = rows[i][0];
    p.fraction = csv_number(rows[i][1], i);
    p.seed = static_cast<std::uint64_t>(csv_number(rows[i][2], i));
    p.accuracy = csv_number(rows[i][3], i);
    out.push_back(p);
  }
  return out;
}

std::vector<CrlaIrlaPoint> parse_crla_irla_csv(std::string_view text) {
  std::vector<CrlaIrlaPoint> out;
  const auto rows = csv_rows(text, "checkpoint_step,p,crla,irla,overall,n", 6);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CrlaIrlaPoint pt;
    pt.step = static_cast<int>(csv_number(rows[i][0], i));
    pt.report.p = csv_number(rows[i][1], i);
    if (!rows[i][2].empty()) pt.report.crla = csv_number(rows[i][2], i);
    if (!rows[i][3].empty()) pt.report.irla = csv_number(rows[i][3], i);
    pt.report.overall = csv_number(rows[i][4], i);
    pt.report.n = static_cast<std::size_t>(csv_number(rows[i][5], i));
    out.push_back(pt);
  }
  return out;
}

std::string probes_csv(const std::vector<ProbeReport>& probes) {
  std::string out = "probe,task,split,accuracy,chance\n";
  for (const auto& p : probes) {
    for (const auto& [split, acc] : {std::pair{"train", p.train_accuracy}, std::pair{"test", p.test_accuracy}}) {
      out += std::string(to_string(p.kind)) + "," + p.task + "," + split + "," + g17(acc) + "," + g17(p.chance) + "\n";
    }
  }
  return out;
}

std::string summary_json(const AnalysisReport& report) {
  json j;
  json scaling = json::array();
  for (const auto& p : report.scaling) {
    scaling.push_back({{"variant", p.variant}, {"fraction", p.fraction}, {"seed", p.seed}, {"accuracy", p.accuracy},
                       {"charts", p.charts}});
  }
  json crla = json::array();
  for (const auto& pt : report.crla_irla) {
    crla.push_back({{"checkpoint_step", pt.step},
                    {"p", pt.report.p},
                    {"crla", optional_json(pt.report.crla)},
                    {"irla", optional_json(pt.report.irla)},
                    {"overall", pt.report.overall},
                    {"n", pt.report.n},
                    {"total_probability_holds", total_probability_holds(pt.report)}});
  }
  json probes = json::array();
  for (const auto& p : report.probes) {
    probes.push_back({{"probe", to_string(p.kind)},
                      {"task", p.task},
                      {"train_accuracy", p.train_accuracy},
                      {"test_accuracy", p.test_accuracy},
                      {"n_train", p.n_train},
                      {"n_test", p.n_test},
                      {"classes", p.classes},
                      {"chance", p.chance}});
  }
  j["scaling"] = scaling;
  j["crla_irla"] = crla;
  j["probes"] = probes;
  j["provenance"] = report.provenance;
  return j.dump(2) + "\n";
}

std::string scaling_svg(const std::vector<ScalingPoint>& points) {
  std::map<std::string, std::map<double, std::pair<double, int>>> acc;
  for (const auto& p : points) {
    auto& cell = acc[p.variant][p.fraction];
    cell.first += p.accuracy;
    cell.second += 1;
  }
  std::vector<PlotSeries> series;
  for (const auto& [variant, by_fraction] : acc) {
    PlotSeries s{variant, {}};
    for (const auto& [f, sum] : by_fraction) s.points.emplace_back(f, sum.first / sum.second);
    series.push_back(std::move(s));
  }
  return line_plot("Retrieval accuracy vs training data", "training fraction", "accuracy", series);
}

std::string crla_irla_svg(const std::vector<CrlaIrlaPoint>& points) {
  PlotSeries crla{"CRLA", {}}, irla{"IRLA", {}}, overall{"overall", {}};
  for (const auto& pt : points) {
    const double x = pt.step;
    crla.points.emplace_back(x, pt.report.crla);
    irla.points.emplace_back(x, pt.report.irla);
    overall.points.emplace_back(x, pt.report.overall);
  }
  return line_plot("Probe accuracy by retrieval outcome", "probe step", "accuracy", {crla, irla, overall});
}

std::vector<std::filesystem::path> emit_report(const AnalysisReport& report, const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& bytes) {
    write_file(dir / name, bytes);
    written.push_back(dir / name);
  };
  if (!report.scaling.empty()) {
    put("scaling.csv", scaling_csv(report.scaling));
    put("scaling.svg", scaling_svg(report.scaling));
  }
  if (!report.crla_irla.empty()) {
    put("crla_irla.csv", crla_irla_csv(report.crla_irla));
    put("crla_irla.svg", crla_irla_svg(report.crla_irla));
  }
  if (!report.probes.empty()) put("probes.csv", probes_csv(report.probes));
  put("summary.json", summary_json(report));
  return written;
}

}  // namespace chartlab::analysis
