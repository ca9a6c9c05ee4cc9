#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace calibra {

/// Deterministic generator with a fully specified algorithm
/// (mt19937_64 bits; uniforms via 53-bit mantissa; normals via Box-Muller),
/// so the generator contract is reproducible across platforms.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64/box-muller";

  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() {  // [0, 1)
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  double normal();
  /// Uniform integer in [0, bound), bound >= 1, by rejection.
  std::uint64_t bounded(std::uint64_t bound);
  /// Derives an independent stream seed for a sub-task.
  std::uint64_t derive() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

/// splitmix64 step; used to derive per-run seeds from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

struct Provenance {
  std::string source;  // generator name or file path
  std::uint64_t seed = 0;
  std::string rng;        // algorithm name, empty for files
  std::string file_hash;  // FNV-1a 64 hex, empty for generated data
};

/// Immutable-after-construction table of inputs and targets, with optional
/// ground-truth mean/sigma columns for synthetic data.
struct Dataset {
  std::size_t dim = 0;
  std::vector<double> x;  // row-major n x dim
  std::vector<double> y;
  std::vector<double> true_mean;   // empty if unknown
  std::vector<double> true_sigma;  // empty if unknown
  Provenance provenance;

  std::size_t n() const { return y.size(); }
  std::span<const double> x_row(std::size_t i) const {
    return {x.data() + i * dim, dim};
  }
  bool has_truth() const { return !true_sigma.empty(); }
};

/// The toy generators: names G, Y, W, 5D. Inputs uniform on the stated
/// domain, targets sampled from N(f(x), sigma(x)^2); true columns filled.
Dataset gen_toy(const std::string& name, std::size_t n, std::uint64_t seed);

/// True mean / noise of a toy problem at a point (used by the exact mean
/// model and by benchmark ground truth).
double toy_mean(const std::string& name, std::span<const double> x);
double toy_sigma(const std::string& name, std::span<const double> x);
std::size_t toy_dim(const std::string& name);
/// Per-dimension domain bounds (lo, hi).
std::pair<double, double> toy_domain(const std::string& name);

/// Column roles for CSV ingestion. Empty `inputs` means: use the header
/// convention (columns named x1..xd are inputs; y is the target;
/// true_mean/true_sigma are recognized) and otherwise treat every column
/// except the last as an input.
struct CsvSchema {
  std::vector<std::string> inputs;
  std::string target = "y";
  std::string true_mean_col;   // optional
  std::string true_sigma_col;  // optional
  std::vector<std::string> extra;  // extra columns to load (e.g. prediction columns)
};

/// Loads a dataset plus any requested extra columns. Rejects files with
/// missing columns or non-finite / unparsable values (the error names the
/// offending row).
struct LoadedCsv {
  Dataset data;
  std::vector<std::string> extra_names;
  std::vector<std::vector<double>> extra_cols;
};
LoadedCsv load_csv(const std::string& path, const CsvSchema& schema = {});

/// Writes a dataset in the same format gen/eval consume: header
/// x1..xd,y[,true_mean,true_sigma], RFC-4180 commas, shortest round-trip
/// doubles.
void write_csv(const std::string& path, const Dataset& data);

/// Generic numeric table writer (header + rows), same number format.
void write_table_csv(const std::string& path, std::span<const std::string> header,
                     const std::vector<std::vector<double>>& rows);

struct SplitSpec {
  double train = 0.33, val = 0.33, test = 0.34;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded uniform shuffle then contiguous cut. Partitions are disjoint and
/// exhaustive; an empty partition is an error.
SplitIndices split(std::size_t n, const SplitSpec& spec);

Dataset subset(const Dataset& data, std::span<const std::size_t> idx);

/// Per-column affine map to zero mean / unit variance, fitted on one
/// dataset (the train partition) and applied to others. Zero-variance
/// columns pass through unchanged.
struct Standardizer {
  std::vector<double> x_mean, x_scale;  // scale = std, 1.0 for constant columns
  double y_mean = 0.0, y_scale = 1.0;
  bool include_y = true;

  std::vector<double> transform_x(std::span<const double> row) const;
  double transform_y(double y) const { return include_y ? (y - y_mean) / y_scale : y; }
  double inverse_y(double y) const { return include_y ? y * y_scale + y_mean : y; }
};

Standardizer fit_standardizer(const Dataset& train, bool include_y);
Dataset apply_standardizer(const Standardizer& s, const Dataset& data);

/// Spec form: stats from the given data, transformed copy plus the map.
std::pair<Dataset, Standardizer> standardize(const Dataset& data, bool include_y = true);

/// FNV-1a 64 hash of a file's bytes, as hex.
std::string file_hash_hex(const std::string& path);

}  // namespace calibra
