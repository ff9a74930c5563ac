#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

#include "cmpamp/container.hpp"
#include "cmpamp/model.hpp"

using namespace cmpamp;

TEST(PartitionColumns, OffsetsAreCumulative) {
  auto part = partition_columns(10, {4, 3, 3});
  EXPECT_EQ(part.offsets, (std::vector<std::size_t>{0, 4, 7}));
  EXPECT_EQ(part.columns(), 10u);
  EXPECT_EQ(partition_columns(10, {10}).offsets, (std::vector<std::size_t>{0}));
}

TEST(PartitionColumns, RejectsBadSizes) {
  EXPECT_THROW(partition_columns(10, {4, 4}), std::invalid_argument);
  EXPECT_THROW(partition_columns(10, {10, 0}), std::invalid_argument);
  EXPECT_THROW(partition_columns(10, {}), std::invalid_argument);
}

TEST(PartitionColumns, EqualPartitionTiles) {
  for (std::size_t N : {7u, 10u, 151u}) {
    for (std::size_t P = 1; P <= 4; ++P) {
      auto part = equal_partition(N, P);
      std::vector<int> hits(N, 0);
      for (std::size_t p = 0; p < P; ++p)
        for (std::size_t j = 0; j < part.sizes[p]; ++j) ++hits[part.offsets[p] + j];
      for (int h : hits) EXPECT_EQ(h, 1);
    }
  }
}

TEST(GenerateMatrix, SeededDeterminism) {
  Matrix a = generate_matrix(4, 4, 7);
  Matrix b = generate_matrix(4, 4, 7);
  EXPECT_TRUE((a.array() == b.array()).all());
  Matrix c = generate_matrix(4, 4, 8);
  EXPECT_FALSE((a.array() == c.array()).all());
}

TEST(GenerateMatrix, RejectsZeroDimensions) {
  EXPECT_THROW(generate_matrix(0, 5, 1), std::invalid_argument);
  EXPECT_THROW(generate_matrix(5, 0, 1), std::invalid_argument);
}

TEST(GenerateMatrix, ColumnNormsConcentrate) {
  // ||A_j||^2 ~ chi^2_n / n: standard deviation sqrt(2/n) = 0.014 at n = 10^4.
  Matrix A = generate_matrix(10000, 100, 3);
  for (Eigen::Index j = 0; j < A.cols(); ++j) EXPECT_NEAR(A.col(j).squaredNorm(), 1.0, 0.1);
  // Entry variance 1/n over all n*N entries.
  EXPECT_NEAR(A.squaredNorm() / static_cast<double>(A.size()), 1e-4, 1e-4 * 0.01);
  EXPECT_NEAR(A.mean(), 0.0, 1e-4);
}

TEST(GenerateMatrix, ColumnBlocksAreIndependentOfWidth) {
  // Column j depends only on (seed, j): a narrower matrix is a prefix.
  Matrix wide = generate_matrix(6, 10, 11);
  Matrix narrow = generate_matrix(6, 4, 11);
  EXPECT_TRUE((wide.leftCols(4).array() == narrow.array()).all());
}

TEST(GenerateSignal, DegenerateAndMoments) {
  PriorSpec zero{PriorKind::bernoulli_gaussian, 0.0, 1.0};
  EXPECT_EQ(generate_signal(1000, zero, 1).squaredNorm(), 0.0);

  PriorSpec dense{PriorKind::bernoulli_gaussian, 1.0, 1.0};
  Vector x = generate_signal(1000000, dense, 2);
  EXPECT_NEAR(x.mean(), 0.0, 0.01);
  EXPECT_NEAR(x.squaredNorm() / 1e6, 1.0, 0.01);

  PriorSpec sparse{PriorKind::bernoulli_gaussian, 0.1, 1.0};
  Vector s = generate_signal(1000000, sparse, 3);
  const double frac = static_cast<double>((s.array() != 0.0).count()) / 1e6;
  EXPECT_NEAR(frac, 0.1, 0.005);
}

TEST(GenerateSignal, RademacherTakesTwoValues) {
  PriorSpec prior{PriorKind::rademacher_sparse, 0.3, 4.0};
  Vector x = generate_signal(100000, prior, 5);
  for (double v : x) EXPECT_TRUE(v == 0.0 || v == 2.0 || v == -2.0);
  EXPECT_NEAR(x.squaredNorm() / 1e5, prior.second_moment(), 0.05);
}

TEST(GenerateSignal, RejectsBadEpsilon) {
  EXPECT_THROW(generate_signal(10, PriorSpec{PriorKind::bernoulli_gaussian, 1.5, 1.0}, 1),
               std::invalid_argument);
  EXPECT_THROW(generate_signal(10, PriorSpec{PriorKind::bernoulli_gaussian, -0.1, 1.0}, 1),
               std::invalid_argument);
}

TEST(AssembleInstance, ZeroSignalAndNoiseGiveZeroMeasurements) {
  Matrix A = generate_matrix(5, 8, 1);
  auto inst = assemble_instance(A, Vector::Zero(8), Vector::Zero(5), partition_columns(8, {8}));
  EXPECT_EQ(inst.y.squaredNorm(), 0.0);
  // P = 1: the only block is the whole matrix.
  EXPECT_TRUE((inst.block(0).array() == inst.A.array()).all());
}

TEST(AssembleInstance, RejectsDimensionMismatch) {
  Matrix A = generate_matrix(5, 8, 1);
  EXPECT_THROW(assemble_instance(A, Vector::Zero(7), Vector::Zero(5), partition_columns(8, {8})),
               std::invalid_argument);
  EXPECT_THROW(assemble_instance(A, Vector::Zero(8), Vector::Zero(4), partition_columns(8, {8})),
               std::invalid_argument);
  EXPECT_THROW(assemble_instance(A, Vector::Zero(8), Vector::Zero(5), partition_columns(7, {7})),
               std::invalid_argument);
}

TEST(GenerateInstance, MeasurementIdentityHoldsPerBlock) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    InstanceParams params;
    params.n = 60;
    params.sizes = {30, 50, 40};
    auto inst = generate_instance(params, seed);
    Vector recomputed = inst.w;
    for (std::size_t p = 0; p < inst.processors(); ++p) recomputed += inst.block(p) * inst.signal_block(p);
    const double scale = 1.0 + inst.y.lpNorm<Eigen::Infinity>();
    EXPECT_LE((inst.y - recomputed).lpNorm<Eigen::Infinity>(), 1e-12 * scale);
    EXPECT_LE((inst.y - inst.A * inst.x - inst.w).lpNorm<Eigen::Infinity>(), 1e-12 * scale);
  }
}

TEST(GenerateInstance, SameSeedIsBitIdentical) {
  InstanceParams params;
  params.n = 40;
  params.sizes = {20, 30};
  auto a = generate_instance(params, 9);
  auto b = generate_instance(params, 9);
  EXPECT_EQ(encode_instance(a), encode_instance(b));
}

TEST(GenerateInstance, CorrelatedBlocksShareADirection) {
  InstanceParams params;
  params.n = 4000;
  params.sizes = {50, 50};
  params.matrix = MatrixKind::correlated_blocks;
  params.column_correlation = 0.5;
  auto inst = generate_instance(params, 4);
  auto b0 = inst.block(0);
  const double within = b0.col(0).dot(b0.col(1));
  const double across = b0.col(0).dot(inst.block(1).col(0));
  EXPECT_NEAR(within, 0.5, 0.1);
  EXPECT_NEAR(across, 0.0, 0.1);
  EXPECT_NEAR(b0.col(3).squaredNorm(), 1.0, 0.1);
}

TEST(InstanceContainer, RoundTripsAndRejectsDamage) {
  InstanceParams params;
  params.n = 7;
  params.sizes = {3, 5};
  auto inst = generate_instance(params, 21);
  auto bytes = encode_instance(inst);
  ASSERT_EQ(bytes.size(), 4 + 2 + 8 * 5 + 8 * (7 * 8 + 8 + 7 + 7));
  EXPECT_EQ(bytes[0], 'C');
  EXPECT_EQ(bytes[3], 'A');
  // A is stored row-major: the first payload double is A(0,0), the second A(0,1).
  double second;
  std::memcpy(&second, bytes.data() + 46 + 8, 8);
  EXPECT_EQ(second, inst.A(0, 1));

  auto back = decode_instance(bytes, inst.sigma_w_sq, inst.prior);
  EXPECT_TRUE((back.A.array() == inst.A.array()).all());
  EXPECT_TRUE((back.y.array() == inst.y.array()).all());
  EXPECT_EQ(back.partition, inst.partition);
  EXPECT_EQ(encode_instance(back), bytes);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_instance(bad_magic), ContainerError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_THROW(decode_instance(truncated), ContainerError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_instance(bad_version), ContainerError);
}
