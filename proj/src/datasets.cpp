#include "calibra/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace calibra {

namespace {

constexpr double kPi = 3.141592653589793;

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

double parse_double(std::string_view tok, std::size_t row, const std::string& col) {
  double v{};
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || p != last) {
    throw std::runtime_error("csv: row " + std::to_string(row) + ", column '" + col +
                             "': cannot parse '" + std::string(tok) + "'");
  }
  if (!std::isfinite(v)) {
    throw std::runtime_error("csv: row " + std::to_string(row) + ", column '" + col +
                             "': non-finite value");
  }
  return v;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

double Rng::normal() {
  // Box-Muller, one value per pair of uniforms; fully specified.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

std::uint64_t Rng::bounded(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::bounded: bound must be >= 1");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do { v = gen_(); } while (v >= limit);
  return v % bound;
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::size_t toy_dim(const std::string& name) {
  if (name == "G" || name == "Y" || name == "W") return 1;
  if (name == "5D") return 5;
  throw std::invalid_argument("unknown toy dataset '" + name + "' (expected G, Y, W or 5D)");
}

std::pair<double, double> toy_domain(const std::string& name) {
  if (name == "W") return {0.0, kPi};
  toy_dim(name);  // validates
  return {0.0, 1.0};
}

double toy_mean(const std::string& name, std::span<const double> x) {
  if (name == "G") return 2.0 * std::sin(2.0 * kPi * x[0]);
  if (name == "Y") {
    const double t = x[0];
    return 2.0 * (std::exp(-30.0 * (t - 0.25) * (t - 0.25)) + std::sin(kPi * t * t)) - 2.0;
  }
  if (name == "W") return std::sin(2.5 * x[0]) * std::sin(1.5 * x[0]);
  if (name == "5D") return 0.0;
  throw std::invalid_argument("unknown toy dataset '" + name + "'");
}

double toy_sigma(const std::string& name, std::span<const double> x) {
  if (name == "G") return 0.5 * x[0] + 0.5;
  if (name == "Y") return std::exp(std::sin(2.0 * kPi * x[0])) / 3.0;
  if (name == "W") {
    const double s = 1.0 - std::sin(2.5 * x[0]);
    return 0.01 + 0.25 * s * s;
  }
  if (name == "5D") {
    double s = 0.0;
    for (double xi : x) s += 5.0 * xi;
    return 0.45 * (std::cos(kPi + s) + 1.2);
  }
  throw std::invalid_argument("unknown toy dataset '" + name + "'");
}

Dataset gen_toy(const std::string& name, std::size_t n, std::uint64_t seed) {
  const std::size_t d = toy_dim(name);
  if (n < 1) throw std::invalid_argument("gen_toy: n must be >= 1");
  const auto [lo, hi] = toy_domain(name);
  Dataset ds;
  ds.dim = d;
  ds.x.resize(n * d);
  ds.y.resize(n);
  ds.true_mean.resize(n);
  ds.true_sigma.resize(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.x[i * d + j] = rng.uniform(lo, hi);
    const auto row = ds.x_row(i);
    const double f = toy_mean(name, row);
    const double s = toy_sigma(name, row);
    ds.true_mean[i] = f;
    ds.true_sigma[i] = s;
    ds.y[i] = f + s * rng.normal();
  }
  ds.provenance = {"toy:" + name, seed, Rng::kAlgorithm, ""};
  return ds;
}

LoadedCsv load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("csv: '" + path + "' is empty");
  const std::vector<std::string> header = split_line(line);

  auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };

  std::vector<std::size_t> input_idx;
  std::size_t target_idx;
  std::optional<std::size_t> mean_idx, sigma_idx;

  if (!schema.inputs.empty()) {
    for (const auto& name : schema.inputs) {
      auto idx = find_col(name);
      if (!idx) throw std::runtime_error("csv: missing input column '" + name + "'");
      input_idx.push_back(*idx);
    }
    auto t = find_col(schema.target);
    if (!t) throw std::runtime_error("csv: missing target column '" + schema.target + "'");
    target_idx = *t;
  } else {
    // Header convention: x1..xd inputs, y target, true_* recognized.
    for (std::size_t d = 1;; ++d) {
      auto idx = find_col("x" + std::to_string(d));
      if (!idx) break;
      input_idx.push_back(*idx);
    }
    auto t = find_col(schema.target);
    if (!input_idx.empty() && t) {
      target_idx = *t;
    } else {
      // Fall back: all columns except the last are inputs.
      if (header.size() < 2) throw std::runtime_error("csv: need at least two columns");
      input_idx.clear();
      for (std::size_t i = 0; i + 1 < header.size(); ++i) input_idx.push_back(i);
      target_idx = header.size() - 1;
    }
  }
  if (!schema.true_mean_col.empty()) {
    mean_idx = find_col(schema.true_mean_col);
    if (!mean_idx) throw std::runtime_error("csv: missing column '" + schema.true_mean_col + "'");
  } else {
    mean_idx = find_col("true_mean");
  }
  if (!schema.true_sigma_col.empty()) {
    sigma_idx = find_col(schema.true_sigma_col);
    if (!sigma_idx) throw std::runtime_error("csv: missing column '" + schema.true_sigma_col + "'");
  } else {
    sigma_idx = find_col("true_sigma");
  }

  LoadedCsv out;
  std::vector<std::size_t> extra_idx;
  for (const auto& name : schema.extra) {
    auto idx = find_col(name);
    if (!idx) throw std::runtime_error("csv: missing column '" + name + "'");
    extra_idx.push_back(*idx);
    out.extra_names.push_back(name);
  }
  out.extra_cols.resize(extra_idx.size());

  Dataset& ds = out.data;
  ds.dim = input_idx.size();
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto toks = split_line(line);
    if (toks.size() != header.size()) {
      throw std::runtime_error("csv: row " + std::to_string(row) + " has " +
                               std::to_string(toks.size()) + " fields, expected " +
                               std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < input_idx.size(); ++j) {
      ds.x.push_back(parse_double(toks[input_idx[j]], row, header[input_idx[j]]));
    }
    ds.y.push_back(parse_double(toks[target_idx], row, header[target_idx]));
    if (mean_idx) ds.true_mean.push_back(parse_double(toks[*mean_idx], row, header[*mean_idx]));
    if (sigma_idx) ds.true_sigma.push_back(parse_double(toks[*sigma_idx], row, header[*sigma_idx]));
    for (std::size_t j = 0; j < extra_idx.size(); ++j) {
      out.extra_cols[j].push_back(parse_double(toks[extra_idx[j]], row, header[extra_idx[j]]));
    }
  }
  if (ds.y.empty()) throw std::runtime_error("csv: '" + path + "' has no data rows");
  ds.provenance = {path, 0, "", file_hash_hex(path)};
  return out;
}

void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream outf(path);
  if (!outf) throw std::runtime_error("cannot write '" + path + "'");
  for (std::size_t j = 0; j < data.dim; ++j) outf << "x" << (j + 1) << ",";
  outf << "y";
  const bool truth = data.has_truth();
  if (truth) outf << ",true_mean,true_sigma";
  outf << "\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t j = 0; j < data.dim; ++j) {
      outf << format_double(data.x[i * data.dim + j]) << ",";
    }
    outf << format_double(data.y[i]);
    if (truth) {
      outf << "," << format_double(data.true_mean[i]) << ","
           << format_double(data.true_sigma[i]);
    }
    outf << "\n";
  }
  if (!outf) throw std::runtime_error("write failed for '" + path + "'");
}

void write_table_csv(const std::string& path, std::span<const std::string> header,
                     const std::vector<std::vector<double>>& rows) {
  std::ofstream outf(path);
  if (!outf) throw std::runtime_error("cannot write '" + path + "'");
  for (std::size_t j = 0; j < header.size(); ++j) {
    outf << header[j] << (j + 1 < header.size() ? "," : "");
  }
  outf << "\n";
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw std::invalid_argument("write_table_csv: ragged row");
    for (std::size_t j = 0; j < r.size(); ++j) {
      outf << format_double(r[j]) << (j + 1 < r.size() ? "," : "");
    }
    outf << "\n";
  }
  if (!outf) throw std::runtime_error("write failed for '" + path + "'");
}

SplitIndices split(std::size_t n, const SplitSpec& spec) {
  if (n < 3) throw std::invalid_argument("split: need at least 3 samples");
  if (!(spec.train > 0.0 && spec.val > 0.0 && spec.test > 0.0)) {
    throw std::invalid_argument("split: fractions must be positive");
  }
  if (std::fabs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split: fractions must sum to 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.bounded(i + 1)]);
  }
  const auto n_train = static_cast<std::size_t>(spec.train * static_cast<double>(n));
  const auto n_val = static_cast<std::size_t>(spec.val * static_cast<double>(n));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw std::invalid_argument("split: a partition would be empty");
  }
  SplitIndices out;
  out.train.assign(order.begin(), order.begin() + n_train);
  out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  out.test.assign(order.begin() + n_train + n_val, order.end());
  return out;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> idx) {
  Dataset out;
  out.dim = data.dim;
  out.provenance = data.provenance;
  out.x.reserve(idx.size() * data.dim);
  out.y.reserve(idx.size());
  for (std::size_t i : idx) {
    const auto row = data.x_row(i);
    out.x.insert(out.x.end(), row.begin(), row.end());
    out.y.push_back(data.y[i]);
    if (!data.true_mean.empty()) out.true_mean.push_back(data.true_mean[i]);
    if (!data.true_sigma.empty()) out.true_sigma.push_back(data.true_sigma[i]);
  }
  return out;
}

std::vector<double> Standardizer::transform_x(std::span<const double> row) const {
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    out[j] = (row[j] - x_mean[j]) / x_scale[j];
  }
  return out;
}

Standardizer fit_standardizer(const Dataset& train, bool include_y) {
  const std::size_t n = train.n();
  if (n == 0) throw std::invalid_argument("fit_standardizer: empty dataset");
  Standardizer s;
  s.include_y = include_y;
  s.x_mean.assign(train.dim, 0.0);
  s.x_scale.assign(train.dim, 1.0);
  for (std::size_t j = 0; j < train.dim; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += train.x[i * train.dim + j];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = train.x[i * train.dim + j] - m;
      v += d * d;
    }
    v /= static_cast<double>(n);
    s.x_mean[j] = m;
    s.x_scale[j] = v > 0.0 ? std::sqrt(v) : 1.0;  // constant column passes through
  }
  if (include_y) {
    double m = std::accumulate(train.y.begin(), train.y.end(), 0.0) / static_cast<double>(n);
    double v = 0.0;
    for (double yi : train.y) v += (yi - m) * (yi - m);
    v /= static_cast<double>(n);
    s.y_mean = m;
    s.y_scale = v > 0.0 ? std::sqrt(v) : 1.0;
  }
  return s;
}

Dataset apply_standardizer(const Standardizer& s, const Dataset& data) {
  Dataset out = data;
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t j = 0; j < data.dim; ++j) {
      out.x[i * data.dim + j] = (data.x[i * data.dim + j] - s.x_mean[j]) / s.x_scale[j];
    }
    out.y[i] = s.transform_y(data.y[i]);
    if (!out.true_mean.empty()) out.true_mean[i] = s.transform_y(data.true_mean[i]);
    if (!out.true_sigma.empty() && s.include_y) out.true_sigma[i] = data.true_sigma[i] / s.y_scale;
  }
  return out;
}

std::pair<Dataset, Standardizer> standardize(const Dataset& data, bool include_y) {
  Standardizer s = fit_standardizer(data, include_y);
  return {apply_standardizer(s, data), s};
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for hashing");
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (!in) break;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

}  // namespace calibra
