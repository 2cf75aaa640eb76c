#include "disent/factor_models.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"

#include "disent/errors.hpp"

namespace disent {

FactorSpace::FactorSpace(std::vector<int> cardinalities, std::vector<std::string> names)
    : cardinalities_(std::move(cardinalities)), names_(std::move(names)) {
  if (cardinalities_.size() < 2) throw ConfigError("a factor space needs at least 2 factors");
  for (int c : cardinalities_)
    if (c < 2) throw ConfigError("every factor needs cardinality >= 2");
  if (names_.empty()) {
    for (std::size_t k = 0; k < cardinalities_.size(); ++k) names_.push_back("factor_" + std::to_string(k));
  }
  if (names_.size() != cardinalities_.size()) throw ConfigError("factor names and cardinalities differ in length");
}

std::size_t FactorSpace::grid_size() const {
  std::size_t n = 1;
  for (int c : cardinalities_) n *= static_cast<std::size_t>(c);
  return n;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kNone: return "none";
    case Variant::kColor: return "color";
    case Variant::kNoise: return "noise";
    case Variant::kPatch: return "patch";
  }
  return "none";
}

Variant variant_from_string(const std::string& s) {
  if (s == "none") return Variant::kNone;
  if (s == "color") return Variant::kColor;
  if (s == "noise") return Variant::kNoise;
  if (s == "patch") return Variant::kPatch;
  throw ConfigError("unknown variant '" + s + "' (expected none|color|noise|patch)");
}

// ---------------------------------------------------------------------------
// Micro-sprites rasterizer

namespace {

constexpr int kSupersample = 8;

bool inside_shape(int shape, double u, double v, double radius) {
  switch (shape) {
    case 0: {  // square
      const double h = 0.8 * radius;
      return std::fabs(u) <= h && std::fabs(v) <= h;
    }
    case 1: {  // ellipse, aspect 1 : 0.55
      const double a = radius, b = 0.55 * radius;
      return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
    }
    default: {  // equilateral triangle with circumradius `radius`
      // Outward edge normals at 270, 30 and 150 degrees; the inradius is r/2.
      constexpr double kNormals[3][2] = {{0.0, -1.0}, {0.8660254037844386, 0.5}, {-0.8660254037844386, 0.5}};
      for (const auto& n : kNormals)
        if (n[0] * u + n[1] * v > 0.5 * radius) return false;
      return true;
    }
  }
}

}  // namespace

Observation render_micro_sprite(const FactorVector& z, int resolution) {
  if (z.values.size() != 5) throw InputError("micro-sprites expects 5 factor values");
  const int shape = z.values[0];
  const double scale = 0.5 + 0.5 * z.values[1] / 3.0;
  const double theta = z.values[2] * (std::numbers::pi / 2.0) / 8.0;
  const double unit = resolution / 16.0;
  const double cx = unit * (4.0 + z.values[3] * 8.0 / 7.0);
  const double cy = unit * (4.0 + z.values[4] * 8.0 / 7.0);
  const double radius = unit * 3.5 * scale;
  const double ct = std::cos(theta), st = std::sin(theta);

  Observation obs{resolution, 1, std::vector<double>(static_cast<std::size_t>(resolution) * resolution, 0.0)};
  for (int row = 0; row < resolution; ++row) {
    for (int col = 0; col < resolution; ++col) {
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double x = col + (sx + 0.5) / kSupersample - cx;
          const double y = row + (sy + 0.5) / kSupersample - cy;
          // Rotate the sample point by -theta into the shape frame.
          const double u = ct * x + st * y;
          const double v = -st * x + ct * y;
          hits += inside_shape(shape, u, v, radius) ? 1 : 0;
        }
      }
      obs.pixels[static_cast<std::size_t>(row) * resolution + col] =
          static_cast<double>(hits) / (kSupersample * kSupersample);
    }
  }
  return obs;
}

const std::vector<double>& texture_canvas() {
  static const std::vector<double> canvas = [] {
    constexpr double kFreq[3] = {1.5, 2.5, 4.0};
    constexpr double kAngle[3] = {0.3, 1.9, 3.4};
    constexpr double kPhase[3][3] = {{0.0, 2.1, 4.2}, {1.0, 3.3, 5.1}, {2.5, 0.7, 3.9}};
    std::vector<double> c(static_cast<std::size_t>(kTextureSize) * kTextureSize * 3);
    for (int y = 0; y < kTextureSize; ++y)
      for (int x = 0; x < kTextureSize; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          double v = 0.5;
          for (int b = 0; b < 3; ++b) {
            const double t = (x * std::cos(kAngle[b]) + y * std::sin(kAngle[b])) / kTextureSize;
            v += std::sin(2.0 * std::numbers::pi * kFreq[b] * t + kPhase[b][ch]) / 6.0;
          }
          c[(static_cast<std::size_t>(y) * kTextureSize + x) * 3 + ch] = std::clamp(v, 0.0, 1.0);
        }
    return c;
  }();
  return canvas;
}

Observation apply_variant(const Observation& base, Variant variant, Rng& rng) {
  if (base.channels != 1) throw InputError("variants apply to single-channel base renders");
  const std::size_t npix = static_cast<std::size_t>(base.resolution) * base.resolution;
  switch (variant) {
    case Variant::kNone: return base;
    case Variant::kColor: {
      Observation out{base.resolution, 3, std::vector<double>(npix * 3)};
      double s[3];
      for (double& v : s) v = rng.uniform(0.5, 1.0);
      for (std::size_t i = 0; i < npix; ++i)
        for (int c = 0; c < 3; ++c) out.pixels[i * 3 + c] = base.pixels[i] * s[c];
      return out;
    }
    case Variant::kNoise: {
      Observation out = base;
      for (std::size_t i = 0; i < npix; ++i)
        if (base.pixels[i] == 0.0) out.pixels[i] = rng.uniform();
      return out;
    }
    case Variant::kPatch: {
      if (base.resolution > kTextureSize) throw InputError("render larger than texture canvas");
      const auto& canvas = texture_canvas();
      const int span = kTextureSize - base.resolution + 1;
      const int ox = rng.uniform_int(span);
      const int oy = rng.uniform_int(span);
      double shift[3];
      for (double& v : shift) v = rng.uniform();
      Observation out{base.resolution, 3, std::vector<double>(npix * 3)};
      for (int r = 0; r < base.resolution; ++r)
        for (int c = 0; c < base.resolution; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * base.resolution + c;
          const bool fg = base.pixels[i] > 0.0;
          for (int ch = 0; ch < 3; ++ch) {
            const double t = canvas[(static_cast<std::size_t>(oy + r) * kTextureSize + ox + c) * 3 + ch];
            const double bg = (t + shift[ch]) / 2.0;
            out.pixels[i * 3 + ch] = fg ? 1.0 - bg : bg;
          }
        }
      return out;
    }
  }
  throw ConfigError("unknown variant");
}

// ---------------------------------------------------------------------------

GroundTruthModel::GroundTruthModel(std::string name, FactorSpace space, Renderer renderer,
                                   int resolution, Variant variant)
    : name_(std::move(name)), space_(std::move(space)), resolution_(resolution), variant_(variant) {
  if (resolution_ < 2) throw ConfigError("resolution must be at least 2");
  auto images = std::make_shared<std::vector<Observation>>();
  images->reserve(space_.grid_size());
  for (std::size_t i = 0; i < space_.grid_size(); ++i) images->push_back(renderer(from_flat_index(i), resolution_));
  base_images_ = std::move(images);
}

GroundTruthModel GroundTruthModel::micro_sprites(Variant variant) {
  FactorSpace space({3, 4, 8, 8, 8}, {"shape", "scale", "orientation", "position_x", "position_y"});
  return GroundTruthModel("micro_sprites", std::move(space), &render_micro_sprite, 16, variant);
}

GroundTruthModel GroundTruthModel::by_name(const std::string& name, Variant variant) {
  if (name == "micro_sprites") return micro_sprites(variant);
  throw ConfigError("unknown ground-truth model '" + name + "'");
}

int GroundTruthModel::channels() const {
  return (variant_ == Variant::kColor || variant_ == Variant::kPatch) ? 3 : 1;
}

std::size_t GroundTruthModel::pixel_count() const {
  return static_cast<std::size_t>(resolution_) * resolution_ * channels();
}

void GroundTruthModel::check(const FactorVector& z) const {
  if (z.values.size() != space_.num_factors())
    throw InputError("factor vector has " + std::to_string(z.values.size()) + " values, expected " +
                     std::to_string(space_.num_factors()));
  for (std::size_t k = 0; k < z.values.size(); ++k)
    if (z.values[k] < 0 || z.values[k] >= space_.cardinality(k))
      throw InputError("factor " + std::to_string(k) + " value " + std::to_string(z.values[k]) +
                       " out of range [0, " + std::to_string(space_.cardinality(k)) + ")");
}

std::size_t GroundTruthModel::flat_index(const FactorVector& z) const {
  check(z);
  std::size_t idx = 0;
  for (std::size_t k = 0; k < z.values.size(); ++k)
    idx = idx * static_cast<std::size_t>(space_.cardinality(k)) + static_cast<std::size_t>(z.values[k]);
  return idx;
}

FactorVector GroundTruthModel::from_flat_index(std::size_t index) const {
  FactorVector z{std::vector<int>(space_.num_factors())};
  for (std::size_t k = space_.num_factors(); k-- > 0;) {
    const auto c = static_cast<std::size_t>(space_.cardinality(k));
    z.values[k] = static_cast<int>(index % c);
    index /= c;
  }
  return z;
}

std::vector<FactorVector> GroundTruthModel::sample_factors(std::size_t n, Rng& rng) const {
  if (n == 0) throw InputError("sample_factors needs n >= 1");
  std::vector<FactorVector> out(n);
  for (auto& z : out) {
    z.values.resize(space_.num_factors());
    for (std::size_t k = 0; k < space_.num_factors(); ++k) z.values[k] = rng.uniform_int(space_.cardinality(k));
  }
  return out;
}

std::vector<FactorVector> GroundTruthModel::sample_fixed_factor_values(std::size_t n, std::size_t factor_index,
                                                                       int value, Rng& rng) const {
  if (factor_index >= space_.num_factors())
    throw InputError("factor index " + std::to_string(factor_index) + " out of range");
  if (value < 0 || value >= space_.cardinality(factor_index))
    throw InputError("fixed value " + std::to_string(value) + " out of range for factor " +
                     std::to_string(factor_index));
  auto zs = sample_factors(n, rng);
  for (auto& z : zs) z.values[factor_index] = value;
  return zs;
}

LabeledBatch GroundTruthModel::sample_fixed_factor(std::size_t n, std::size_t factor_index, int value,
                                                   Rng& rng) const {
  LabeledBatch b;
  b.factors = sample_fixed_factor_values(n, factor_index, value, rng);
  b.observations = render_batch(b.factors, rng);
  return b;
}

const Observation& GroundTruthModel::base_image(const FactorVector& z) const {
  return (*base_images_)[flat_index(z)];
}

Observation GroundTruthModel::render(const FactorVector& z, Rng& rng) const {
  return apply_variant(base_image(z), variant_, rng);
}

std::vector<Observation> GroundTruthModel::render_batch(const std::vector<FactorVector>& zs, Rng& rng) const {
  std::vector<Observation> out;
  out.reserve(zs.size());
  for (const auto& z : zs) out.push_back(render(z, rng));
  return out;
}

Tensor to_tensor(const std::vector<Observation>& batch) {
  if (batch.empty()) return Tensor(0, 0);
  const std::size_t w = batch.front().pixels.size();
  Tensor t(batch.size(), w);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].pixels.size() != w) throw InputError("observations in a batch differ in size");
    std::copy(batch[i].pixels.begin(), batch[i].pixels.end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  return t;
}

Eigen::MatrixXi to_matrix(const std::vector<FactorVector>& zs) {
  const std::size_t k = zs.empty() ? 0 : zs.front().values.size();
  Eigen::MatrixXi m(static_cast<Eigen::Index>(zs.size()), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < zs.size(); ++i)
    for (std::size_t j = 0; j < k; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = zs[i].values[j];
  return m;
}

// ---------------------------------------------------------------------------
// External tables

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && ws(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && ws(static_cast<unsigned char>(s[i]))) ++i;
  return s.substr(i);
}

}  // namespace

ExternalTable load_external_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open table '" + path.string() + "'", 0);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty table", 1);
  const auto header = split_csv(trim(line));
  std::size_t k = 0, d = 0;
  for (const auto& raw : header) {
    const std::string h = trim(raw);
    if (d == 0 && h == "factor_" + std::to_string(k)) {
      ++k;
    } else if (h == "rep_" + std::to_string(d)) {
      ++d;
    } else {
      throw ParseError("malformed header: expected factor_" + std::to_string(k) + " or rep_" +
                           std::to_string(d) + ", got '" + h + "'",
                       1);
    }
  }
  if (k == 0 || d == 0) throw ParseError("header needs at least one factor_ and one rep_ column", 1);

  std::vector<std::vector<int>> factors;
  std::vector<std::vector<double>> reps;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != k + d)
      throw ParseError("row has " + std::to_string(cells.size()) + " columns, expected " + std::to_string(k + d),
                       lineno);
    std::vector<int> f(k);
    std::vector<double> r(d);
    for (std::size_t j = 0; j < k + d; ++j) {
      const std::string cell = trim(cells[j]);
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      if (j < k) {
        auto [ptr, ec] = std::from_chars(first, last, f[j]);
        if (ec != std::errc() || ptr != last || cell.empty())
          throw ParseError("factor_" + std::to_string(j) + " value '" + cell + "' is not an integer", lineno);
      } else {
        auto [ptr, ec] = std::from_chars(first, last, r[j - k]);
        if (ec != std::errc() || ptr != last || cell.empty())
          throw ParseError("rep_" + std::to_string(j - k) + " value '" + cell + "' is not a number", lineno);
      }
    }
    factors.push_back(std::move(f));
    reps.push_back(std::move(r));
  }
  ExternalTable t;
  const auto n = static_cast<Eigen::Index>(factors.size());
  t.factors.resize(n, static_cast<Eigen::Index>(k));
  t.representations.resize(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) t.factors(i, static_cast<Eigen::Index>(j)) = factors[i][j];
    for (std::size_t j = 0; j < d; ++j) t.representations(i, static_cast<Eigen::Index>(j)) = reps[i][j];
  }
  return t;
}

void write_external_table(const std::filesystem::path& path, const ExternalTable& table) {
  if (table.factors.rows() != table.representations.rows())
    throw InputError("factor and representation row counts differ");
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  for (Eigen::Index j = 0; j < table.factors.cols(); ++j) out << (j ? "," : "") << "factor_" << j;
  for (Eigen::Index j = 0; j < table.representations.cols(); ++j) out << ",rep_" << j;
  out << '\n';
  char buf[64];
  for (Eigen::Index i = 0; i < table.factors.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.factors.cols(); ++j) out << (j ? "," : "") << table.factors(i, j);
    for (Eigen::Index j = 0; j < table.representations.cols(); ++j) {
      // Shortest representation that round-trips exactly.
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), table.representations(i, j));
      out << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Dataset preview

namespace {

static_assert(std::endian::native == std::endian::little, "npy writer assumes a little-endian host");

void write_npy(const std::filesystem::path& path, const std::string& descr, const std::vector<std::size_t>& shape,
               const void* data, std::size_t bytes) {
  std::string dict = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) dict += (i ? ", " : "") + std::to_string(shape[i]);
  if (shape.size() == 1) dict += ",";
  dict += "), }";
  const std::size_t preamble = 10;
  std::size_t total = preamble + dict.size() + 1;
  dict.append((64 - total % 64) % 64, ' ');
  dict += '\n';
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(dict.size());
  out.put(static_cast<char>(len & 0xff));
  out.put(static_cast<char>(len >> 8));
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

}  // namespace

void write_dataset_preview(const GroundTruthModel& model, std::size_t count, Rng& rng,
                           const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto zs = model.sample_factors(count, rng);
  const auto obs = model.render_batch(zs, rng);
  std::vector<double> pixels;
  pixels.reserve(count * model.pixel_count());
  for (const auto& o : obs) pixels.insert(pixels.end(), o.pixels.begin(), o.pixels.end());
  std::vector<std::int64_t> factors;
  for (const auto& z : zs) factors.insert(factors.end(), z.values.begin(), z.values.end());
  const auto res = static_cast<std::size_t>(model.resolution());
  const auto ch = static_cast<std::size_t>(model.channels());
  write_npy(out_dir / "observations.npy", "<f8", {count, res, res, ch}, pixels.data(), pixels.size() * sizeof(double));
  write_npy(out_dir / "factors.npy", "<i8", {count, model.factor_space().num_factors()}, factors.data(),
            factors.size() * sizeof(std::int64_t));
  nlohmann::json manifest = {
      {"model", model.name()},
      {"variant", to_string(model.variant())},
      {"count", count},
      {"observations", {{"file", "observations.npy"}, {"dtype", "<f8"}, {"shape", {count, res, res, ch}}}},
      {"factors", {{"file", "factors.npy"}, {"dtype", "<i8"}, {"shape", {count, model.factor_space().num_factors()}}}},
      {"factor_names", model.factor_space().names()},
      {"cardinalities", model.factor_space().cardinalities()},
  };
  std::ofstream(out_dir / "manifest.json") << manifest.dump(2) << '\n';
}

}  // namespace disent
