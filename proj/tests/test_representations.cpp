#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "cateforge/representations.hpp"
#include "test_util.hpp"

using namespace cateforge;

namespace {

RepresentationConfig entangled(double sigma, std::size_t d = 64, std::size_t k = 8) {
  RepresentationConfig c;
  c.channel = Channel::EntangledSim;
  c.embed_dim = d;
  c.distractor_count = k;
  c.noise_sigma = sigma;
  c.mixing_seed = 17;
  return c;
}

std::vector<std::size_t> first_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
  return e;
}

// In-sample R^2 of an ordinary least-squares fit (with intercept) of y on x.
double probe_r2(const Matrix& x, std::span<const double> y) {
  Eigen::MatrixXd a(x.rows(), x.cols() + 1);
  a.leftCols(x.cols()) = to_eigen(x);
  a.col(x.cols()).setOnes();
  Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  Eigen::VectorXd coef = a.colPivHouseholderQr().solve(b);
  const double ss_res = (a * coef - b).squaredNorm();
  const double ss_tot = (b.array() - b.mean()).matrix().squaredNorm();
  return 1.0 - ss_res / ss_tot;
}

std::vector<double> column(const Matrix& m, std::size_t c) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, c);
  return out;
}

}  // namespace

TEST(Representations, ColumnCounts) {
  const auto d = sample_dataset(default_generator_spec(), 200);
  const auto rows = first_rows(150);
  RepresentationConfig c;
  c.channel = Channel::None;
  EXPECT_EQ(build_representation(d, c, rows).phi.cols(), 6u);
  c.channel = Channel::Perfect;
  EXPECT_EQ(build_representation(d, c, rows).phi.cols(), 11u);
  const auto e = build_representation(d, entangled(0.1), rows);
  EXPECT_EQ(e.phi.cols(), 70u);
  EXPECT_EQ(e.feature_names.size(), 70u);
  for (double v : e.phi.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(representation_width(entangled(0.1), 6), 70u);
}

TEST(Representations, ExternalChannelWidth) {
  const auto d = sample_dataset(default_generator_spec(), 50);
  EmbeddingMatrix m{50, 3, std::vector<float>(150)};
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = static_cast<float>(i % 7);
  RepresentationConfig c;
  c.channel = Channel::ExternalEmbedding;
  const auto r = build_representation(d, c, first_rows(40), &m);
  EXPECT_EQ(r.phi.cols(), 9u);
  EmbeddingMatrix short_m{49, 3, std::vector<float>(147)};
  EXPECT_THROW(build_representation(d, c, first_rows(40), &short_m), SizeError);
}

TEST(Representations, PerfectFeatureOrder) {
  const auto d = sample_dataset(default_generator_spec(), 100);
  RepresentationConfig c;
  c.channel = Channel::Perfect;
  const auto r = build_representation(d, c, first_rows(100));
  EXPECT_EQ(r.feature_names[0], "asthma");
  EXPECT_EQ(r.feature_names[6], "dyspnea");
  EXPECT_EQ(r.feature_names[10], "nasal");
}

TEST(Representations, StandardizedTrainingColumns) {
  const auto d = sample_dataset(default_generator_spec(), 600);
  const auto rows = first_rows(400);
  const auto r = build_representation(d, entangled(0.1), rows);
  for (std::size_t c = 0; c < r.phi.cols(); ++c) {
    double sum = 0.0, sq = 0.0;
    for (auto i : rows) sum += r.phi(i, c);
    const double mean = sum / 400.0;
    for (auto i : rows) sq += (r.phi(i, c) - mean) * (r.phi(i, c) - mean);
    EXPECT_LE(std::abs(mean), 1e-9);
    EXPECT_NEAR(std::sqrt(sq / 400.0), 1.0, 1e-9);
  }
}

TEST(Representations, ConstantColumnKeepsUnitScale) {
  Matrix m(4, 2);
  for (std::size_t i = 0; i < 4; ++i) {
    m(i, 0) = 3.0;
    m(i, 1) = static_cast<double>(i);
  }
  const auto rows = first_rows(4);
  auto s = Standardization::fit(m, rows);
  EXPECT_EQ(s.scale[0], 1.0);
  s.apply(m);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(m(i, 0), 0.0);
}

TEST(Representations, StandardizationUsesTrainingRowsOnly) {
  const auto d = sample_dataset(default_generator_spec(), 500);
  const auto split = split_indices(500, 300, 200, 4);
  RepresentationConfig c;
  c.channel = Channel::Perfect;
  const auto a = build_representation(d, c, split.train);

  // Permute the test rows among themselves; training rows must not move.
  std::vector<std::size_t> order(500);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto shuffled = split.test;
  rng::Stream(5).shuffle(std::span<std::size_t>(shuffled));
  for (std::size_t i = 0; i < split.test.size(); ++i) order[split.test[i]] = shuffled[i];
  const auto permuted = subset(d, order);
  for (auto ch : {Channel::Perfect, Channel::EntangledSim}) {
    RepresentationConfig cc = ch == Channel::Perfect ? c : entangled(0.1);
    const auto x = build_representation(d, cc, split.train);
    const auto y = build_representation(permuted, cc, split.train);
    for (auto r : split.train)
      for (std::size_t j = 0; j < x.phi.cols(); ++j) EXPECT_EQ(x.phi(r, j), y.phi(r, j));
    EXPECT_EQ(x.standardization.mean, y.standardization.mean);
  }
  EXPECT_EQ(a.standardization.mean.size(), 11u);
}

TEST(Representations, NoiselessEntanglementIsRecoverable) {
  const auto d = sample_dataset(default_generator_spec(), 300);
  const auto cfg = entangled(0.0);
  const auto e = entangle(d.x_symptoms, d.x_background, cfg);
  const auto map = make_entanglement_map(cfg, d.x_background.cols());
  const Eigen::MatrixXd q = to_eigen(map.basis);
  EXPECT_LE((q.transpose() * q - Eigen::MatrixXd::Identity(13, 13)).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::MatrixXd s = to_eigen(e) * q;  // rows are Q^T E_i
  const Eigen::MatrixXd a = to_eigen(map.distractor);
  const Eigen::MatrixXd bg = to_eigen(d.x_background);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(s(i, j), d.x_symptoms(i, j), 1e-10);
    const Eigen::VectorXd z = a * bg.row(i).transpose();
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(s(i, 5 + j), z(j), 1e-10);
  }
}

TEST(Representations, LinearProbeRecoversSymptoms) {
  const auto d = sample_dataset(default_generator_spec(), 2000);
  const auto e = entangle(d.x_symptoms, d.x_background, entangled(0.0));
  for (std::size_t j = 0; j < 5; ++j) EXPECT_GE(probe_r2(e, column(d.x_symptoms, j)), 0.999) << j;
}

TEST(Representations, ProbeDegradesWithNoise) {
  const auto d = sample_dataset(default_generator_spec(), 2000);
  for (std::size_t j = 0; j < 5; ++j) {
    const auto y = column(d.x_symptoms, j);
    const double r0 = probe_r2(entangle(d.x_symptoms, d.x_background, entangled(0.0)), y);
    const double r1 = probe_r2(entangle(d.x_symptoms, d.x_background, entangled(0.5)), y);
    const double r2 = probe_r2(entangle(d.x_symptoms, d.x_background, entangled(2.0)), y);
    EXPECT_GE(r0, r1);
    EXPECT_GE(r1, r2);
    EXPECT_LT(r2, 0.9);
  }
}

TEST(Representations, EntanglementDeterministic) {
  const auto d = sample_dataset(default_generator_spec(), 100);
  const auto a = entangle(d.x_symptoms, d.x_background, entangled(0.1));
  const auto b = entangle(d.x_symptoms, d.x_background, entangled(0.1));
  EXPECT_EQ(a, b);
  auto other = entangled(0.1);
  other.mixing_seed = 18;
  EXPECT_NE(a, entangle(d.x_symptoms, d.x_background, other));
}

TEST(Representations, NoiseKeyedOnRowId) {
  const auto d = sample_dataset(default_generator_spec(), 50);
  const auto full = entangle(d.x_symptoms, d.x_background, entangled(0.3), d.ids);
  const std::size_t rows[] = {7, 3};
  const auto sub = subset(d, rows);
  const auto part = entangle(sub.x_symptoms, sub.x_background, entangled(0.3), sub.ids);
  for (std::size_t j = 0; j < 64; ++j) {
    EXPECT_EQ(part(0, j), full(7, j));
    EXPECT_EQ(part(1, j), full(3, j));
  }
}

TEST(Representations, RankDeficientMixingRejected) {
  auto c = entangled(0.1, 4, 8);
  auto v = check_representation(c);
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v.front().key, "representation.embed_dim");
  EXPECT_THROW(make_entanglement_map(c, 6), ConfigError);
  c = entangled(-1.0);
  EXPECT_EQ(check_representation(c).front().key, "representation.noise_sigma");
}

TEST(Representations, EntangleRequiresChannel) {
  const auto d = sample_dataset(default_generator_spec(), 10);
  auto c = entangled(0.1);
  c.channel = Channel::Perfect;
  EXPECT_THROW(entangle(d.x_symptoms, d.x_background, c), ContractError);
}

TEST(Representations, ChannelNames) {
  EXPECT_EQ(parse_channel("entangledsim"), Channel::EntangledSim);
  EXPECT_EQ(parse_channel("None"), Channel::None);
  EXPECT_FALSE(parse_channel("partial").has_value());
  EXPECT_STREQ(channel_name(Channel::ExternalEmbedding), "ExternalEmbedding");
}

// ---------------------------------------------------------------------------

TEST(EmbeddingFile, BinaryRoundTripIsBitExact) {
  EmbeddingMatrix m{3, 4, {}};
  for (int i = 0; i < 12; ++i) m.values.push_back(static_cast<float>(std::sin(i) * 1e3) / 7.0f);
  m.values[5] = -0.0f;
  m.values[6] = std::numeric_limits<float>::denorm_min();
  std::stringstream ss;
  write_embeddings(ss, m);
  EXPECT_EQ(ss.str().size(), 16u + 48u);
  EXPECT_EQ(ss.str().substr(0, 4), "CEMB");
  const auto r = read_embeddings(ss);
  ASSERT_EQ(r.rows, 3u);
  ASSERT_EQ(r.cols, 4u);
  for (std::size_t i = 0; i < 12; ++i)
    EXPECT_EQ(std::bit_cast<std::uint32_t>(r.values[i]), std::bit_cast<std::uint32_t>(m.values[i]));
}

TEST(EmbeddingFile, LittleEndianHeader) {
  EmbeddingMatrix m{2, 1, {1.0f, 2.0f}};
  std::stringstream ss;
  write_embeddings(ss, m);
  const std::string b = ss.str();
  const unsigned char expected[] = {'C', 'E', 'M', 'B', 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0x80, 0x3f};
  for (std::size_t i = 0; i < sizeof(expected); ++i) EXPECT_EQ(static_cast<unsigned char>(b[i]), expected[i]) << i;
}

TEST(EmbeddingFile, FileRoundTrip) {
  const auto dir = testutil::scratch_dir("cemb");
  EmbeddingMatrix m{2, 2, {1.5f, -2.25f, 3.0f, 0.125f}};
  save_embeddings((dir / "e.cemb").string(), m);
  EXPECT_EQ(load_embeddings((dir / "e.cemb").string()), m);
  EXPECT_THROW(load_embeddings((dir / "missing.cemb").string()), FormatError);
}

TEST(EmbeddingFile, TruncatedPayload) {
  EmbeddingMatrix m{3, 2, {1, 2, 3, 4, 5, 6}};
  std::stringstream ss;
  write_embeddings(ss, m);
  std::string b = ss.str();
  b.resize(b.size() - 4);  // five floats for a 3 x 2 header
  std::stringstream in(b);
  try {
    read_embeddings(in);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
}

TEST(EmbeddingFile, TrailingData) {
  std::stringstream ss;
  write_embeddings(ss, EmbeddingMatrix{1, 1, {1.0f}});
  std::stringstream in(ss.str() + std::string(4, '\0'));
  EXPECT_THROW(read_embeddings(in), FormatError);
}

TEST(EmbeddingFile, BadVersionAndMagic) {
  std::stringstream ss;
  write_embeddings(ss, EmbeddingMatrix{1, 1, {1.0f}});
  std::string b = ss.str();
  b[4] = 2;
  std::stringstream v(b);
  EXPECT_THROW(read_embeddings(v), FormatError);
  std::stringstream junk("XXXXgarbage");
  EXPECT_THROW(read_embeddings(junk), FormatError);
}

TEST(EmbeddingFile, NanRejectedWithLocation) {
  EmbeddingMatrix m{2, 3, {0, 0, 0, 0, std::numeric_limits<float>::quiet_NaN(), 0}};
  std::stringstream ss;
  write_embeddings(ss, m);
  try {
    read_embeddings(ss);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1, col 1"), std::string::npos) << e.what();
  }
}

TEST(EmbeddingFile, CsvForm) {
  std::stringstream ss("2 3\n1,2,3\n4.5, -5, 6e-1\n");
  const auto m = read_embeddings(ss);
  EXPECT_EQ(m.rows, 2u);
  EXPECT_EQ(m.cols, 3u);
  EXPECT_EQ(m.values[3], 4.5f);
  EXPECT_EQ(m.values[5], 0.6f);
  std::stringstream short_rows("3 1\n1\n2\n");
  EXPECT_THROW(read_embeddings(short_rows), FormatError);
  std::stringstream wide("1 2\n1,2,3\n");
  EXPECT_THROW(read_embeddings(wide), FormatError);
  std::stringstream inf("1 2\n1,inf\n");
  try {
    read_embeddings(inf);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("row 0, col 1"), std::string::npos);
  }
}
