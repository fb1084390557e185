#pragma once

// Model inputs for the four confounder settings:
//   Perfect            [background | symptoms]
//   None               [background]
//   EntangledSim       [background | E], E = Q [symptoms | z] + sigma * noise
//   ExternalEmbedding  [background | embeddings loaded from a CEMB/CSV file]
// All columns are z-scored with statistics from the training rows only.

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cateforge/common.hpp"
#include "cateforge/datagen.hpp"
#include "cateforge/random.hpp"

namespace cateforge {

enum class Channel { Perfect, None, EntangledSim, ExternalEmbedding };

inline const char* channel_name(Channel c) noexcept {
  switch (c) {
    case Channel::Perfect: return "Perfect";
    case Channel::None: return "None";
    case Channel::EntangledSim: return "EntangledSim";
    case Channel::ExternalEmbedding: return "ExternalEmbedding";
  }
  return "?";
}

inline std::optional<Channel> parse_channel(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "perfect") return Channel::Perfect;
  if (s == "none") return Channel::None;
  if (s == "entangledsim" || s == "entangled") return Channel::EntangledSim;
  if (s == "externalembedding" || s == "external") return Channel::ExternalEmbedding;
  return std::nullopt;
}

struct RepresentationConfig {
  Channel channel = Channel::Perfect;
  std::size_t embed_dim = 64;
  double noise_sigma = 0.1;
  std::size_t distractor_count = 8;
  std::uint64_t mixing_seed = 0;
  std::string embedding_path;
};

inline std::vector<Violation> check_representation(const RepresentationConfig& cfg) {
  std::vector<Violation> out;
  if (cfg.embed_dim == 0) out.push_back({"representation.embed_dim", "must be positive"});
  if (cfg.embed_dim < kNumSymptoms + cfg.distractor_count)
    out.push_back({"representation.embed_dim", "embed_dim (" + std::to_string(cfg.embed_dim) +
                                                   ") must be at least 5 + distractor_count (" +
                                                   std::to_string(kNumSymptoms + cfg.distractor_count) + ")"});
  if (!(cfg.noise_sigma >= 0.0) || !std::isfinite(cfg.noise_sigma))
    out.push_back({"representation.noise_sigma", "must be a finite non-negative number"});
  return out;
}

struct Standardization {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardization fit(const Matrix& m, std::span<const std::size_t> rows) {
    if (rows.empty()) throw SizeError("standardization: no training rows");
    Standardization s;
    s.mean.assign(m.cols(), 0.0);
    s.scale.assign(m.cols(), 1.0);
    const double n = static_cast<double>(rows.size());
    for (std::size_t c = 0; c < m.cols(); ++c) {
      double sum = 0.0;
      for (auto r : rows) sum += m(r, c);
      double mu = sum / n;
      double ss = 0.0;
      for (auto r : rows) ss += (m(r, c) - mu) * (m(r, c) - mu);
      double sd = std::sqrt(ss / n);
      s.mean[c] = mu;
      s.scale[c] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  void apply(Matrix& m) const {
    if (m.cols() != mean.size()) throw DimensionError("standardization: column count mismatch");
    for (std::size_t r = 0; r < m.rows(); ++r) {
      auto row = m.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mean[c]) / scale[c];
    }
  }
};

struct RepresentedDataset {
  Matrix phi;
  std::vector<std::string> feature_names;
  Standardization standardization;
};

// ---------------------------------------------------------------------------
// Entanglement simulator

struct EntanglementMap {
  Matrix basis;       // d x (5 + k), orthonormal columns
  Matrix distractor;  // k x p_b, z = distractor * background
};

inline EntanglementMap make_entanglement_map(const RepresentationConfig& cfg, std::size_t background_dim) {
  auto v = check_representation(cfg);
  if (!v.empty()) throw ConfigError(v.front().key, v.front().message);
  const std::size_t d = cfg.embed_dim;
  const std::size_t r = kNumSymptoms + cfg.distractor_count;

  rng::Stream gauss(rng::derive_seed(cfg.mixing_seed, "mixing"));
  Eigen::MatrixXd g(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(r));
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = gauss.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());

  EntanglementMap map;
  map.basis = Matrix(d, r);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < r; ++j)
      map.basis(i, j) = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));

  rng::Stream dist(rng::derive_seed(cfg.mixing_seed, "distractor"));
  map.distractor = Matrix(cfg.distractor_count, background_dim);
  const double s = background_dim > 0 ? 1.0 / std::sqrt(static_cast<double>(background_dim)) : 0.0;
  for (double& a : map.distractor.data()) a = s * dist.normal();
  return map;
}

// E_i = Q [symptoms_i | z_i] + sigma n_i, with n_i keyed on (mixing_seed, row_keys[i]).
// Row keys default to the row index.
inline Matrix entangle(const Matrix& symptoms, const Matrix& background, const RepresentationConfig& cfg,
                       std::span<const std::int64_t> row_keys = {}) {
  if (cfg.channel != Channel::EntangledSim)
    throw ContractError("entangle: representation channel is not EntangledSim");
  if (symptoms.cols() != kNumSymptoms) throw DimensionError("entangle: expected 5 symptom columns");
  if (symptoms.rows() != background.rows()) throw DimensionError("entangle: row count mismatch");
  if (!row_keys.empty() && row_keys.size() != symptoms.rows())
    throw DimensionError("entangle: row key count mismatch");

  const auto map = make_entanglement_map(cfg, background.cols());
  const std::size_t d = cfg.embed_dim;
  const std::size_t k = cfg.distractor_count;
  const std::size_t r = kNumSymptoms + k;
  const std::uint64_t noise_seed = rng::derive_seed(cfg.mixing_seed, "noise");

  Matrix out(symptoms.rows(), d);
  std::vector<double> signal(r);
  for (std::size_t i = 0; i < symptoms.rows(); ++i) {
    auto sym = symptoms.row(i);
    auto bg = background.row(i);
    std::copy(sym.begin(), sym.end(), signal.begin());
    for (std::size_t a = 0; a < k; ++a) {
      double z = 0.0;
      for (std::size_t b = 0; b < bg.size(); ++b) z += map.distractor(a, b) * bg[b];
      signal[kNumSymptoms + a] = z;
    }
    const auto key = row_keys.empty() ? static_cast<std::uint64_t>(i) : static_cast<std::uint64_t>(row_keys[i]);
    auto e = out.row(i);
    for (std::size_t p = 0; p < d; ++p) {
      double v = 0.0;
      for (std::size_t q = 0; q < r; ++q) v += map.basis(p, q) * signal[q];
      if (cfg.noise_sigma > 0.0) v += cfg.noise_sigma * rng::normal_at(noise_seed, key, p);
      e[p] = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding files

struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> values;  // row-major

  Matrix to_matrix() const {
    return Matrix(rows, cols, std::vector<double>(values.begin(), values.end()));
  }
  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xffu);
  os.write(b.data(), 4);
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

inline void check_finite(const EmbeddingMatrix& m) {
  for (std::size_t i = 0; i < m.values.size(); ++i)
    if (!std::isfinite(m.values[i]))
      throw FormatError("embedding file: non-finite value at row " + std::to_string(i / m.cols) + ", col " +
                        std::to_string(i % m.cols));
}

inline EmbeddingMatrix parse_cemb(const std::string& buf) {
  if (buf.size() < 16) throw FormatError("CEMB: truncated header");
  const auto version = get_u32(buf, 4);
  if (version != 1) throw FormatError("CEMB: unsupported version " + std::to_string(version));
  EmbeddingMatrix m;
  m.rows = get_u32(buf, 8);
  m.cols = get_u32(buf, 12);
  const std::size_t count = m.rows * m.cols;
  const std::size_t have = (buf.size() - 16) / 4;
  if ((buf.size() - 16) % 4 != 0 || have < count)
    throw FormatError("CEMB: truncated payload, expected " + std::to_string(count) + " values, found " +
                      std::to_string(have));
  if (have > count)
    throw FormatError("CEMB: trailing data after " + std::to_string(count) + " values");
  m.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) m.values[i] = std::bit_cast<float>(get_u32(buf, 16 + 4 * i));
  check_finite(m);
  return m;
}

inline EmbeddingMatrix parse_embedding_csv(const std::string& buf) {
  std::istringstream is(buf);
  std::string line;
  EmbeddingMatrix m;
  if (!std::getline(is, line)) throw FormatError("embedding CSV: empty file");
  {
    std::istringstream hs(line);
    long long n = -1, d = -1;
    std::string extra;
    if (!(hs >> n >> d) || (hs >> extra) || n < 0 || d <= 0)
      throw FormatError("embedding file: bad magic (neither CEMB nor an 'n d' CSV header)");
    m.rows = static_cast<std::size_t>(n);
    m.cols = static_cast<std::size_t>(d);
  }
  m.values.reserve(m.rows * m.cols);
  std::size_t r = 0;
  while (r < m.rows && std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::size_t c = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      auto next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      std::string field = line.substr(pos, next - pos);
      while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
      while (!field.empty() && field.front() == ' ') field.erase(field.begin());
      char* end = nullptr;
      float v = std::strtof(field.c_str(), &end);
      if (field.empty() || end != field.c_str() + field.size())
        throw FormatError("embedding CSV: cannot parse value at row " + std::to_string(r) + ", col " +
                          std::to_string(c));
      if (!std::isfinite(v))
        throw FormatError("embedding file: non-finite value at row " + std::to_string(r) + ", col " +
                          std::to_string(c));
      m.values.push_back(v);
      ++c;
      pos = next + 1;
    }
    if (c != m.cols)
      throw FormatError("embedding CSV: row " + std::to_string(r) + " has " + std::to_string(c) +
                        " values, expected " + std::to_string(m.cols));
    ++r;
  }
  if (r != m.rows)
    throw FormatError("embedding CSV: truncated payload, expected " + std::to_string(m.rows) + " rows, found " +
                      std::to_string(r));
  return m;
}

}  // namespace detail

inline EmbeddingMatrix read_embeddings(std::istream& is) {
  std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() >= 4 && buf.compare(0, 4, "CEMB") == 0) return detail::parse_cemb(buf);
  return detail::parse_embedding_csv(buf);
}

inline EmbeddingMatrix load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open embedding file '" + path + "'");
  return read_embeddings(in);
}

inline void write_embeddings(std::ostream& os, const EmbeddingMatrix& m) {
  if (m.values.size() != m.rows * m.cols) throw DimensionError("write_embeddings: size mismatch");
  os.write("CEMB", 4);
  detail::put_u32(os, 1);
  detail::put_u32(os, static_cast<std::uint32_t>(m.rows));
  detail::put_u32(os, static_cast<std::uint32_t>(m.cols));
  for (float v : m.values) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
}

inline void save_embeddings(const std::string& path, const EmbeddingMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write embedding file '" + path + "'");
  write_embeddings(out, m);
}

// ---------------------------------------------------------------------------

inline std::size_t representation_width(const RepresentationConfig& cfg, std::size_t background_dim,
                                        std::size_t external_dim = 0) {
  switch (cfg.channel) {
    case Channel::Perfect: return background_dim + kNumSymptoms;
    case Channel::None: return background_dim;
    case Channel::EntangledSim: return background_dim + cfg.embed_dim;
    case Channel::ExternalEmbedding: return background_dim + external_dim;
  }
  return 0;
}

// `external` supplies preloaded embeddings; when null the ExternalEmbedding
// channel reads cfg.embedding_path.
inline RepresentedDataset build_representation(const Dataset& d, const RepresentationConfig& cfg,
                                               std::span<const std::size_t> train_rows,
                                               const EmbeddingMatrix* external = nullptr) {
  RepresentedDataset out;
  out.feature_names = d.background_names;
  Matrix text;
  switch (cfg.channel) {
    case Channel::None:
      break;
    case Channel::Perfect:
      text = d.x_symptoms;
      for (auto n : kSymptomNames) out.feature_names.emplace_back(n);
      break;
    case Channel::EntangledSim:
      text = entangle(d.x_symptoms, d.x_background, cfg, d.ids);
      for (std::size_t j = 0; j < cfg.embed_dim; ++j) out.feature_names.push_back("emb_" + std::to_string(j));
      break;
    case Channel::ExternalEmbedding: {
      EmbeddingMatrix loaded;
      if (external == nullptr) {
        loaded = load_embeddings(cfg.embedding_path);
        external = &loaded;
      }
      if (external->rows != d.size())
        throw SizeError("embedding file has " + std::to_string(external->rows) + " rows but dataset has " +
                        std::to_string(d.size()));
      text = external->to_matrix();
      for (std::size_t j = 0; j < external->cols; ++j) out.feature_names.push_back("emb_" + std::to_string(j));
      break;
    }
  }
  out.phi = text.empty() && cfg.channel == Channel::None ? d.x_background : hconcat(d.x_background, text);
  for (auto r : train_rows)
    if (r >= d.size()) throw SizeError("build_representation: training row index out of range");
  out.standardization = Standardization::fit(out.phi, train_rows);
  out.standardization.apply(out.phi);
  for (double v : out.phi.data())
    if (!std::isfinite(v)) throw FormatError("build_representation: non-finite feature value");
  return out;
}

}  // namespace cateforge
