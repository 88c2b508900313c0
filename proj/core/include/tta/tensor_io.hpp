#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tta/tensor.hpp"

namespace tta {

// TNSR binary layout: "TNSR", u8 version (1), u8 rank, rank x u32 LE dims,
// then f32 LE data in row-major order.
inline constexpr std::uint8_t kTnsrVersion = 1;

std::vector<std::byte> encode_tnsr(const Tensor& t);
/// Throws FormatError on bad magic, unsupported version, or truncation.
Tensor decode_tnsr(std::span<const std::byte> bytes);

void write_tnsr(const std::filesystem::path& path, const Tensor& t);
Tensor read_tnsr(const std::filesystem::path& path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
/// Inverse of stack.
std::vector<Tensor> unstack(const Tensor& stacked);

}  // namespace tta
