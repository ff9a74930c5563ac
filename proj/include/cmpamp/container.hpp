#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmpamp/detail/bytes.hpp"
#include "cmpamp/model.hpp"

namespace cmpamp {

// Instance container layout (all little-endian):
//   "CMPA" | version u16 | n u64 | N u64 | P u64 | sizes u64[P]
//   | A f64[n*N] row-major | x f64[N] | w f64[n] | y f64[n]
inline constexpr std::array<std::uint8_t, 4> kInstanceMagic{'C', 'M', 'P', 'A'};
inline constexpr std::uint16_t kInstanceVersion = 1;

class ContainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<std::uint8_t> encode_instance(const ProblemInstance& inst) {
  using namespace detail;
  std::vector<std::uint8_t> out;
  const std::size_t n = inst.rows();
  const std::size_t N = inst.cols();
  out.reserve(4 + 2 + 8 * (3 + inst.processors()) + 8 * (n * N + N + 2 * n));
  for (std::uint8_t c : kInstanceMagic) put_u8(out, c);
  put_u16(out, kInstanceVersion);
  put_u64(out, n);
  put_u64(out, N);
  put_u64(out, inst.processors());
  for (std::size_t s : inst.partition.sizes) put_u64(out, s);
  for (Eigen::Index i = 0; i < inst.A.rows(); ++i)
    for (Eigen::Index j = 0; j < inst.A.cols(); ++j) put_f64(out, inst.A(i, j));
  for (double v : inst.x) put_f64(out, v);
  for (double v : inst.w) put_f64(out, v);
  for (double v : inst.y) put_f64(out, v);
  return out;
}

/// sigma_w_sq and the prior are run metadata, not stored in the container.
inline ProblemInstance decode_instance(std::span<const std::uint8_t> bytes, double sigma_w_sq = 0.0,
                                       PriorSpec prior = {}) {
  detail::ByteReader in(bytes);
  try {
    auto magic = in.take(4);
    if (!std::equal(magic.begin(), magic.end(), kInstanceMagic.begin()))
      throw ContainerError("not an instance container (bad magic)");
    if (in.u16() != kInstanceVersion) throw ContainerError("unsupported instance container version");
    const std::uint64_t n = in.u64();
    const std::uint64_t N = in.u64();
    const std::uint64_t P = in.u64();
    if (n == 0 || N == 0 || P == 0 || P > N) throw ContainerError("invalid container dimensions");
    // Bound the allocation by what the buffer can actually hold.
    if (in.remaining() / 8 < P || (in.remaining() / 8 - P) / (N + 2) < n)
      throw detail::TruncatedInput("input truncated");
    std::vector<std::size_t> sizes(P);
    for (auto& s : sizes) s = in.u64();
    Partition part;
    try {
      part = partition_columns(N, std::move(sizes));
    } catch (const std::invalid_argument& e) {
      throw ContainerError(e.what());
    }
    Matrix A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(N));
    for (Eigen::Index i = 0; i < A.rows(); ++i)
      for (Eigen::Index j = 0; j < A.cols(); ++j) A(i, j) = in.f64();
    Vector x(static_cast<Eigen::Index>(N));
    for (auto& v : x) v = in.f64();
    Vector w(static_cast<Eigen::Index>(n));
    for (auto& v : w) v = in.f64();
    ProblemInstance inst;
    inst.y.resize(static_cast<Eigen::Index>(n));
    for (auto& v : inst.y) v = in.f64();
    if (in.remaining() != 0) throw ContainerError("trailing bytes after instance container");
    inst.A = std::move(A);
    inst.x = std::move(x);
    inst.w = std::move(w);
    inst.partition = std::move(part);
    inst.sigma_w_sq = sigma_w_sq;
    inst.prior = prior;
    return inst;
  } catch (const detail::TruncatedInput&) {
    throw ContainerError("instance container truncated");
  }
}

inline void write_instance(const std::string& path, const ProblemInstance& inst) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContainerError("cannot open " + path + " for writing");
  auto bytes = encode_instance(inst);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ContainerError("write failed: " + path);
}

inline ProblemInstance read_instance(const std::string& path, double sigma_w_sq = 0.0,
                                     PriorSpec prior = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContainerError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_instance(bytes, sigma_w_sq, prior);
}

}  // namespace cmpamp
