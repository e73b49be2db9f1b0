#include "eoss/tiny_nn/checkpoint.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "eoss/errors.h"

namespace eoss::nn {
namespace {

constexpr char kMagic[8] = {'E', 'O', 'S', 'S', 'C', 'K', 'P', 'T'};

template <class T>
void put_le(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("checkpoint truncated");
  unsigned char b[sizeof(T)];
  std::memcpy(b, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  pos += sizeof(T);
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

std::uint32_t activation_code(Activation a) {
  switch (a) {
    case Activation::kTanh: return 0;
    case Activation::kRelu: return 1;
    case Activation::kIdentity: return 2;
  }
  return 0;
}

}  // namespace

void write_raw_checkpoint(const std::string& path, const RawCheckpoint& c) {
  std::string buf(kMagic, sizeof kMagic);
  put_le<std::uint32_t>(buf, kCheckpointVersion);
  put_le<std::uint32_t>(buf, c.activation_code);
  put_le<std::uint64_t>(buf, c.dims.size());
  for (std::uint64_t d : c.dims) put_le<std::uint64_t>(buf, d);
  put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(c.flat.size()));
  for (Eigen::Index i = 0; i < c.flat.size(); ++i) put_le<double>(buf, c.flat[i]);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

RawCheckpoint read_raw_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < 16 || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  std::size_t pos = 8;
  if (get_le<std::uint32_t>(in, pos) != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version");
  RawCheckpoint c;
  c.activation_code = get_le<std::uint32_t>(in, pos);
  const auto layers = get_le<std::uint64_t>(in, pos);
  if (layers > 1024) throw std::runtime_error("implausible layer count in checkpoint");
  for (std::uint64_t l = 0; l < layers; ++l) c.dims.push_back(get_le<std::uint64_t>(in, pos));
  const auto p = get_le<std::uint64_t>(in, pos);
  if (p > (in.size() - pos) / 8) throw std::runtime_error("checkpoint truncated");
  c.flat.resize(static_cast<Eigen::Index>(p));
  for (std::uint64_t i = 0; i < p; ++i) c.flat[static_cast<Eigen::Index>(i)] = get_le<double>(in, pos);
  if (pos != in.size()) throw std::runtime_error("trailing bytes in checkpoint");
  return c;
}

void write_checkpoint(const std::string& path, const MlpParams& params) {
  RawCheckpoint c;
  c.activation_code = activation_code(params.shape.activation());
  for (int d : params.shape.dims()) c.dims.push_back(static_cast<std::uint64_t>(d));
  c.flat = params.flat;
  write_raw_checkpoint(path, c);
}

MlpParams read_checkpoint(const std::string& path) {
  const RawCheckpoint c = read_raw_checkpoint(path);
  if (c.activation_code > 2) throw std::runtime_error("unknown activation code in checkpoint");
  std::vector<int> dims(c.dims.begin(), c.dims.end());
  const Activation a = c.activation_code == 0   ? Activation::kTanh
                       : c.activation_code == 1 ? Activation::kRelu
                                                : Activation::kIdentity;
  MlpShape shape(dims, a);
  if (c.flat.size() != shape.param_count())
    throw std::runtime_error("checkpoint parameter count does not match its dims");
  return MlpParams{shape, c.flat};
}

}  // namespace eoss::nn
