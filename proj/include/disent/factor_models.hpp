#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "disent/autodiff.hpp"
#include "disent/rng.hpp"

namespace disent {

/// Discrete grid of K ground-truth factors of variation.
class FactorSpace {
 public:
  FactorSpace() = default;
  FactorSpace(std::vector<int> cardinalities, std::vector<std::string> names = {});

  std::size_t num_factors() const { return cardinalities_.size(); }
  const std::vector<int>& cardinalities() const { return cardinalities_; }
  const std::vector<std::string>& names() const { return names_; }
  int cardinality(std::size_t k) const { return cardinalities_.at(k); }
  std::size_t grid_size() const;

 private:
  std::vector<int> cardinalities_;
  std::vector<std::string> names_;
};

struct FactorVector {
  std::vector<int> values;
  bool operator==(const FactorVector&) const = default;
};

/// Row-major pixels, layout (row, col, channel), values in [0, 1].
struct Observation {
  int resolution = 0;
  int channels = 1;
  std::vector<double> pixels;

  double at(int row, int col, int ch = 0) const {
    return pixels[(static_cast<std::size_t>(row) * resolution + col) * channels + ch];
  }
};

enum class Variant { kNone, kColor, kNoise, kPatch };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct LabeledBatch {
  std::vector<FactorVector> factors;
  std::vector<Observation> observations;
};

/// Ground-truth generative model: uniform prior over a factor grid, a
/// deterministic base renderer and an optional stochastic nuisance variant.
/// Immutable; all base images are rendered once at construction.
class GroundTruthModel {
 public:
  using Renderer = Observation (*)(const FactorVector&, int resolution);

  GroundTruthModel(std::string name, FactorSpace space, Renderer renderer, int resolution,
                   Variant variant);

  /// Default micro-sprites: shape(3) x scale(4) x orientation(8) x pos-x(8)
  /// x pos-y(8) rendered at 16x16.
  static GroundTruthModel micro_sprites(Variant variant = Variant::kNone);
  /// Resolve a model by name ("micro_sprites").
  static GroundTruthModel by_name(const std::string& name, Variant variant);

  const std::string& name() const { return name_; }
  const FactorSpace& factor_space() const { return space_; }
  Variant variant() const { return variant_; }
  int resolution() const { return resolution_; }
  int channels() const;
  std::size_t pixel_count() const;

  void check(const FactorVector& z) const;
  std::size_t flat_index(const FactorVector& z) const;
  FactorVector from_flat_index(std::size_t index) const;

  std::vector<FactorVector> sample_factors(std::size_t n, Rng& rng) const;
  /// Factor vectors with `factor_index` clamped to `value`, others uniform.
  std::vector<FactorVector> sample_fixed_factor_values(std::size_t n, std::size_t factor_index,
                                                       int value, Rng& rng) const;
  LabeledBatch sample_fixed_factor(std::size_t n, std::size_t factor_index, int value,
                                   Rng& rng) const;

  /// Deterministic grayscale render of z (no variant applied).
  const Observation& base_image(const FactorVector& z) const;
  /// Full observation; consumes randomness only when a variant is active.
  Observation render(const FactorVector& z, Rng& rng) const;
  std::vector<Observation> render_batch(const std::vector<FactorVector>& zs, Rng& rng) const;

 private:
  std::string name_;
  FactorSpace space_;
  int resolution_;
  Variant variant_;
  std::shared_ptr<const std::vector<Observation>> base_images_;
};

/// Rasterizes one micro-sprite with 8x8 supersampling and box filtering.
Observation render_micro_sprite(const FactorVector& z, int resolution);

/// Applies a stochastic nuisance to a single-channel base render. The
/// foreground mask is the set of pixels with nonzero coverage.
Observation apply_variant(const Observation& base, Variant variant, Rng& rng);

/// Procedural multi-band color texture standing in for a painting; values in
/// [0, 1], `size` x `size` x 3.
const std::vector<double>& texture_canvas();
constexpr int kTextureSize = 64;

/// Stacks observations into an (n x pixels) tensor.
Tensor to_tensor(const std::vector<Observation>& batch);

/// (n x K) integer matrix of factor values.
Eigen::MatrixXi to_matrix(const std::vector<FactorVector>& zs);

struct ExternalTable {
  Eigen::MatrixXi factors;          // n x K
  Eigen::MatrixXd representations;  // n x D
};

/// CSV with header factor_0..factor_{K-1},rep_0..rep_{D-1}.
ExternalTable load_external_table(const std::filesystem::path& path);
void write_external_table(const std::filesystem::path& path, const ExternalTable& table);

/// Writes `count` sample observations as .npy arrays plus manifest.json.
void write_dataset_preview(const GroundTruthModel& model, std::size_t count, Rng& rng,
                           const std::filesystem::path& out_dir);

}  // namespace disent
