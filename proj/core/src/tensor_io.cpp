#include "tta/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace tta {
namespace {

static_assert(std::endian::native == std::endian::little,
              "TNSR encoding assumes a little-endian host");

constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};

template <class T>
void put(std::vector<std::byte>& out, T value) {
  const auto* p = reinterpret_cast<const std::byte*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

}  // namespace

std::vector<std::byte> encode_tnsr(const Tensor& t) {
  if (t.rank() > 255) throw FormatError("TNSR: rank exceeds 255");
  std::vector<std::byte> out;
  out.reserve(6 + 4 * t.shape().size() + 4 * t.size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  out.push_back(static_cast<std::byte>(kTnsrVersion));
  out.push_back(static_cast<std::byte>(t.rank()));
  for (int d : t.shape()) put(out, static_cast<std::uint32_t>(d));
  const auto data = std::as_bytes(t.data());
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

Tensor decode_tnsr(std::span<const std::byte> bytes) {
  if (bytes.size() < 6) throw FormatError("TNSR: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("TNSR: bad magic");
  const auto version = static_cast<std::uint8_t>(bytes[4]);
  if (version != kTnsrVersion) {
    throw FormatError("TNSR: unsupported version " + std::to_string(version));
  }
  const auto rank = static_cast<std::size_t>(bytes[5]);
  if (rank == 0) throw FormatError("TNSR: rank must be >= 1");
  std::size_t offset = 6;
  if (bytes.size() < offset + 4 * rank) throw FormatError("TNSR: truncated dimensions");
  Shape shape(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    std::uint32_t d = 0;
    std::memcpy(&d, bytes.data() + offset, 4);
    offset += 4;
    if (d == 0 || d > static_cast<std::uint32_t>(INT32_MAX)) {
      throw FormatError("TNSR: invalid dimension");
    }
    shape[i] = static_cast<int>(d);
    count *= d;
  }
  const std::size_t expected = offset + 4 * count;
  if (bytes.size() < expected) {
    throw FormatError("TNSR: truncated data (" + std::to_string(bytes.size()) + " of " +
                      std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) throw FormatError("TNSR: trailing bytes after data");
  std::vector<float> data(count);
  std::memcpy(data.data(), bytes.data() + offset, 4 * count);
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("failed reading " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::as_bytes(std::span(text.data(), text.size())));
}

void write_tnsr(const std::filesystem::path& path, const Tensor& t) {
  write_file_bytes(path, encode_tnsr(t));
}

Tensor read_tnsr(const std::filesystem::path& path) {
  try {
    return decode_tnsr(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("stack: no tensors");
  Shape shape = items.front().shape();
  std::vector<float> data;
  data.reserve(items.size() * items.front().size());
  for (const Tensor& t : items) {
    require_same_shape(items.front(), t, "stack");
    data.insert(data.end(), t.data().begin(), t.data().end());
  }
  shape.insert(shape.begin(), static_cast<int>(items.size()));
  return Tensor(std::move(shape), std::move(data));
}

std::vector<Tensor> unstack(const Tensor& stacked) {
  if (stacked.rank() < 2) throw ShapeError("unstack: need rank >= 2");
  Shape inner(stacked.shape().begin() + 1, stacked.shape().end());
  const std::size_t n = numel(inner);
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(stacked.dim(0)));
  for (int i = 0; i < stacked.dim(0); ++i) {
    auto first = stacked.data().begin() + static_cast<long>(i * n);
    out.emplace_back(inner, std::vector<float>(first, first + static_cast<long>(n)));
  }
  return out;
}

}  // namespace tta
