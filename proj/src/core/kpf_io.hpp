// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The KPFlow Authors.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace kpflow {

/// In-memory form of a KPF1 container:
///   "KPF1" | u8 ndim | ndim x u64 dims (LE) | f64 dt (LE) | row-major f64 payload (LE).
struct KpfTensor {
  std::vector<std::uint64_t> dims;
  double dt = 1.0;
  std::vector<double> data;

  std::size_t element_count() const;
};

std::vector<unsigned char> encode_kpf(const KpfTensor& t);
KpfTensor decode_kpf(const std::vector<unsigned char>& bytes);

void write_kpf(const std::filesystem::path& path, const KpfTensor& t);
KpfTensor read_kpf(const std::filesystem::path& path);

KpfTensor to_kpf(const Traj3& q);
Traj3 traj_from_kpf(const KpfTensor& t);
KpfTensor vector_to_kpf(const Vec& v);
Vec vector_from_kpf(const KpfTensor& t);

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace kpflow
