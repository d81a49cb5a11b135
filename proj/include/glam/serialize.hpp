#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "glam/tensor.hpp"

namespace glam {

/// Tensor blob layout (little-endian):
///   "GTSR" | u8 dtype | u8 rank | u64 dims[rank] | row-major payload
enum class DType : std::uint8_t { float32 = 0, float64 = 1 };

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::float32; }
template <>
constexpr DType dtype_of<double>() { return DType::float64; }

template <typename Scalar>
void write_tensor(std::ostream& os, const Tensor<Scalar>& tensor);

/// Reads one blob. A blob of the other floating dtype is converted.
template <typename Scalar>
Tensor<Scalar> read_tensor(std::istream& is);

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& tensor);

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path);

/// Writes `contents` to a sibling temp file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace glam
