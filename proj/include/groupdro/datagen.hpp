#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "groupdro/dataset.hpp"
#include "groupdro/errors.hpp"
#include "groupdro/rng.hpp"

namespace groupdro {

/// Synthetic grouped-data recipe: a binary spurious attribute a agrees with
/// the label with probability p_align, the core feature block is signed by
/// y, the spurious block by a, and noise dimensions carry no signal. Groups
/// are indexed g = K*a + y (m = 2K).
struct SyntheticSpec {
  int d_core = 1;
  int d_spu = 0;
  int d_noise = 0;
  double mu_core = 1.0;
  double mu_spu = 1.0;
  double sigma = 1.0;
  int n_total = 0;
  double p_align = 0.5;
  int classes = 2;  // 2 (m=4) or 3 (m=6)
  std::uint64_t seed = 0;
  /// Optional per-group multiplier on mu_core (groups may differ in
  /// difficulty, not just size). Empty means uniform.
  std::vector<double> mu_core_scale;

  int group_count() const { return 2 * classes; }
  int feature_dim() const { return d_core + d_spu + d_noise; }

  void validate() const {
    if (d_core < 1) throw std::invalid_argument("spec: d_core must be >= 1");
    if (d_spu < 0 || d_noise < 0) throw std::invalid_argument("spec: dimensions must be >= 0");
    if (!(sigma > 0.0)) throw std::invalid_argument("spec: sigma must be positive");
    if (!(mu_core >= 0.0) || !(mu_spu >= 0.0))
      throw std::invalid_argument("spec: signal magnitudes must be >= 0");
    if (!(p_align > 0.0 && p_align < 1.0))
      throw std::invalid_argument("spec: p_align must lie in the open interval (0, 1)");
    if (classes != 2 && classes != 3)
      throw std::invalid_argument("spec: classes must be 2 or 3");
    if (n_total < group_count())
      throw std::invalid_argument("spec: n_total must be at least the group count");
    if (!mu_core_scale.empty() &&
        static_cast<int>(mu_core_scale.size()) != group_count())
      throw std::invalid_argument("spec: mu_core_scale must have one entry per group");
    for (double s : mu_core_scale)
      if (!(s >= 0.0)) throw std::invalid_argument("spec: mu_core_scale entries must be >= 0");
  }
};

inline nlohmann::json to_json(const SyntheticSpec& s) {
  nlohmann::json j{{"d_core", s.d_core},   {"d_spu", s.d_spu},     {"d_noise", s.d_noise},
                   {"mu_core", s.mu_core}, {"mu_spu", s.mu_spu},   {"sigma", s.sigma},
                   {"n_total", s.n_total}, {"p_align", s.p_align}, {"classes", s.classes},
                   {"seed", s.seed}};
  if (!s.mu_core_scale.empty()) j["mu_core_scale"] = s.mu_core_scale;
  return j;
}

inline SyntheticSpec spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  for (const char* field : {"d_core", "mu_core", "mu_spu", "sigma", "n_total", "p_align"})
    if (!j.contains(field))
      throw std::invalid_argument(std::string("spec: missing required field: ") + field);
  s.d_core = j.at("d_core").get<int>();
  s.d_spu = j.value("d_spu", 0);
  s.d_noise = j.value("d_noise", 0);
  s.mu_core = j.at("mu_core").get<double>();
  s.mu_spu = j.at("mu_spu").get<double>();
  s.sigma = j.at("sigma").get<double>();
  s.n_total = j.at("n_total").get<int>();
  s.p_align = j.at("p_align").get<double>();
  s.classes = j.value("classes", 2);
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("mu_core_scale"))
    s.mu_core_scale = j.at("mu_core_scale").get<std::vector<double>>();
  s.validate();
  return s;
}

namespace detail {

// Sign of the core block for class y: +/-1 for the binary task; for the
// three-class variant, dimension j gets +1 when j mod 3 == y, else -1.
inline double core_sign(int classes, int y, int dim_index) {
  if (classes == 2) return y == 1 ? 1.0 : -1.0;
  return dim_index % 3 == y ? 1.0 : -1.0;
}

// The attribute value that "agrees" with label y (a is binary even for the
// three-class variant).
inline int aligned_attribute(int y) { return y % 2; }

}  // namespace detail

/// Draws the dataset: y uniform over classes, a agreeing with y with
/// probability p_align, group id K*a + y, Gaussian feature blocks.
/// Deterministic given the spec's seed. Group assignments are resampled as a
/// whole if any group comes up empty.
inline GroupedDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  const int m = spec.group_count();
  Rng rng(spec.seed);

  std::vector<std::pair<int, int>> assignment(spec.n_total);  // (y, a)
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 1000)
      throw std::invalid_argument(
          "generate: could not realize all groups; n_total is too small for p_align");
    std::vector<int> counts(m, 0);
    for (auto& [y, a] : assignment) {
      y = rng.uniform_int(spec.classes);
      const int aligned = detail::aligned_attribute(y);
      a = rng.uniform01() < spec.p_align ? aligned : 1 - aligned;
      ++counts[spec.classes * a + y];
    }
    bool ok = true;
    for (int c : counts)
      if (c == 0) ok = false;
    if (ok) break;
  }

  std::vector<Example> examples(spec.n_total);
  for (int i = 0; i < spec.n_total; ++i) {
    const auto [y, a] = assignment[i];
    const int g = spec.classes * a + y;
    const double mu_core =
        spec.mu_core * (spec.mu_core_scale.empty() ? 1.0 : spec.mu_core_scale[g]);
    Example& ex = examples[i];
    ex.label = y;
    ex.group = g;
    ex.features.resize(spec.feature_dim());
    int j = 0;
    for (int c = 0; c < spec.d_core; ++c, ++j)
      ex.features[j] = rng.normal(detail::core_sign(spec.classes, y, c) * mu_core, spec.sigma);
    const double spu_mean = (a == 1 ? 1.0 : -1.0) * spec.mu_spu;
    for (int c = 0; c < spec.d_spu; ++c, ++j) ex.features[j] = rng.normal(spu_mean, spec.sigma);
    for (int c = 0; c < spec.d_noise; ++c, ++j) ex.features[j] = rng.normal(0.0, spec.sigma);
  }
  return GroupedDataset(std::move(examples), m, spec.classes);
}

// ---------------------------------------------------------------------------
// CSV schema: header `g,y,x0,...,x{d-1}`, nonnegative integer g and y,
// decimal float features, UTF-8, LF line endings.

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline int parse_nonneg_int(const std::string& tok, std::size_t line_no, const char* what) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(tok, &used);
  } catch (const std::exception&) {
    throw ParseError(line_no, "line " + std::to_string(line_no) + ": bad " + what + " '" +
                                  tok + "'");
  }
  if (used != tok.size() || v < 0)
    throw ParseError(line_no,
                     "line " + std::to_string(line_no) + ": bad " + what + " '" + tok + "'");
  return v;
}

inline double parse_double(const std::string& tok, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (tok.empty() || end != tok.c_str() + tok.size() || !std::isfinite(v))
    throw ParseError(line_no,
                     "line " + std::to_string(line_no) + ": bad feature value '" + tok + "'");
  return v;
}

}  // namespace detail

inline void write_csv(const GroupedDataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "g,y";
  for (int j = 0; j < dataset.feature_dim(); ++j) out << ",x" << j;
  out << "\n";
  for (const Example& ex : dataset.examples()) {
    out << ex.group << "," << ex.label;
    for (double v : ex.features) out << "," << detail::format_double(v);
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

/// Reads the CSV schema back into a dataset. When declared_m / declared_k
/// are given, out-of-range group or label ids are schema errors; otherwise
/// the counts are inferred from the data.
inline GroupedDataset read_csv(const std::string& path,
                               std::optional<int> declared_m = std::nullopt,
                               std::optional<int> declared_k = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const std::vector<std::string> header = detail::split_csv_line(line);
  if (header.size() < 3 || header[0] != "g" || header[1] != "y")
    throw SchemaError(1, "line 1: header must be g,y,x0,...");
  const int d = static_cast<int>(header.size()) - 2;
  for (int j = 0; j < d; ++j)
    if (header[j + 2] != "x" + std::to_string(j))
      throw SchemaError(1, "line 1: feature column " + std::to_string(j + 2) +
                               " must be named x" + std::to_string(j));

  std::vector<Example> examples;
  int max_g = -1, max_y = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> tok = detail::split_csv_line(line);
    if (static_cast<int>(tok.size()) != d + 2)
      throw SchemaError(line_no, "line " + std::to_string(line_no) + ": expected " +
                                     std::to_string(d + 2) + " columns, got " +
                                     std::to_string(tok.size()));
    Example ex;
    ex.group = detail::parse_nonneg_int(tok[0], line_no, "group id");
    ex.label = detail::parse_nonneg_int(tok[1], line_no, "label");
    if (declared_m && ex.group >= *declared_m)
      throw SchemaError(line_no, "line " + std::to_string(line_no) + ": group id " +
                                     std::to_string(ex.group) + " >= declared m " +
                                     std::to_string(*declared_m));
    if (declared_k && ex.label >= *declared_k)
      throw SchemaError(line_no, "line " + std::to_string(line_no) + ": label " +
                                     std::to_string(ex.label) + " >= declared K " +
                                     std::to_string(*declared_k));
    ex.features.resize(d);
    for (int j = 0; j < d; ++j) ex.features[j] = detail::parse_double(tok[j + 2], line_no);
    max_g = std::max(max_g, ex.group);
    max_y = std::max(max_y, ex.label);
    examples.push_back(std::move(ex));
  }
  if (examples.empty())
    throw std::invalid_argument("dataset file has a header but no examples: " + path);
  const int m = declared_m ? *declared_m : max_g + 1;
  const int k = declared_k ? *declared_k : std::max(max_y + 1, 2);
  return GroupedDataset(std::move(examples), m, k);
}

}  // namespace groupdro
