// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#include "core/kpf_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace kpflow {
namespace {

constexpr unsigned char kMagic[4] = {0x4B, 0x50, 0x46, 0x31};

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::vector<unsigned char>& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace

std::size_t KpfTensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::vector<unsigned char> encode_kpf(const KpfTensor& t) {
  require(!t.dims.empty() && t.dims.size() <= 255, ErrorCode::kDimension, "KPF1: ndim must be in [1, 255]");
  require(t.element_count() == t.data.size(), ErrorCode::kDimension, "KPF1: payload size does not match dims");
  std::vector<unsigned char> out;
  out.reserve(5 + 8 * t.dims.size() + 8 + 8 * t.data.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(static_cast<unsigned char>(t.dims.size()));
  for (auto d : t.dims) put_u64(out, d);
  put_f64(out, t.dt);
  for (double v : t.data) put_f64(out, v);
  return out;
}

KpfTensor decode_kpf(const std::vector<unsigned char>& bytes) {
  require(bytes.size() >= 5 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorCode::kIo, "KPF1: bad magic");
  const std::size_t ndim = bytes[4];
  require(ndim >= 1, ErrorCode::kIo, "KPF1: ndim must be >= 1");
  std::size_t off = 5;
  require(bytes.size() >= off + 8 * ndim + 8, ErrorCode::kIo, "KPF1: truncated header");
  KpfTensor t;
  for (std::size_t i = 0; i < ndim; ++i, off += 8) t.dims.push_back(get_u64(bytes.data() + off));
  t.dt = std::bit_cast<double>(get_u64(bytes.data() + off));
  off += 8;
  const std::size_t n = t.element_count();
  require(bytes.size() == off + 8 * n, ErrorCode::kIo, "KPF1: payload size does not match dims");
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i, off += 8) t.data[i] = std::bit_cast<double>(get_u64(bytes.data() + off));
  return t;
}

void write_kpf(const std::filesystem::path& path, const KpfTensor& t) {
  const auto bytes = encode_kpf(t);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(bool(f), ErrorCode::kIo, "cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  require(bool(f), ErrorCode::kIo, "write failed: " + path.string());
}

KpfTensor read_kpf(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), ErrorCode::kIo, "cannot open for reading: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_kpf(bytes);
}

KpfTensor to_kpf(const Traj3& q) {
  KpfTensor t;
  t.dims = {q.B(), q.T(), q.H()};
  t.dt = q.dt();
  t.data.assign(q.data().begin(), q.data().end());
  return t;
}

Traj3 traj_from_kpf(const KpfTensor& t) {
  require(t.dims.size() == 3, ErrorCode::kDimension, "KPF1: expected a 3-tensor");
  Traj3 q(t.dims[0], t.dims[1], t.dims[2], t.dt);
  std::copy(t.data.begin(), t.data.end(), q.data().begin());
  return q;
}

KpfTensor vector_to_kpf(const Vec& v) {
  KpfTensor t;
  t.dims = {static_cast<std::uint64_t>(v.size())};
  t.data.assign(v.data(), v.data() + v.size());
  return t;
}

Vec vector_from_kpf(const KpfTensor& t) {
  require(t.dims.size() == 1, ErrorCode::kDimension, "KPF1: expected a 1-tensor");
  return Eigen::Map<const Vec>(t.data.data(), Eigen::Index(t.data.size()));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(bool(f), ErrorCode::kIo, "cannot open for writing: " + path.string());
  f << text;
  require(bool(f), ErrorCode::kIo, "write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(bool(f), ErrorCode::kIo, "cannot open for reading: " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace kpflow
