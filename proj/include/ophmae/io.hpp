#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ophmae {

static_assert(std::endian::native == std::endian::little,
              "array/checkpoint formats assume a little-endian host");

// Raw array file: [u32 header length][JSON header][f32 payload].
// Header: {"dtype":"f32le","shape":[...]} — shape in row/slice-major order.
void write_f32_array(const std::filesystem::path& path,
                     const std::vector<int>& shape,
                     const std::vector<double>& values);

struct F32Array {
    std::vector<int> shape;
    std::vector<double> values;  // widened from f32 on load, exact
};
F32Array read_f32_array(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

// FNV-1a 64-bit, used for config hashes and checkpoint checksums
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL);
std::string to_hex(uint64_t v);

// Minimal CSV support for the file formats this project emits. Fields that
// contain commas/quotes/newlines are quoted on write and unquoted on read.
std::string csv_escape(const std::string& field);
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

}  // namespace ophmae
