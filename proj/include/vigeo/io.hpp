#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vigeo/tensor.hpp"

namespace vigeo::io {

// TensorFile container:
//   magic "VGEO" | version u32 LE (=1) | dtype u8 | ndim u8 |
//   dims ndim x u64 LE | payload row-major LE
// dtype codes: 1 = float32, 2 = float64, 3 = u8 mask.
inline constexpr uint32_t kVersion = 1;
inline constexpr uint8_t kDtypeF32 = 1;
inline constexpr uint8_t kDtypeF64 = 2;
inline constexpr uint8_t kDtypeU8 = 3;

void write_tensor(const std::string& path, const Tensor& t);
void write_tensor(const std::string& path, const TensorD& t);
void write_tensor(const std::string& path, const MaskTensor& t);

// Dtype code of the file at `path` without reading the payload.
uint8_t peek_dtype(const std::string& path);

Tensor read_tensor_f32(const std::string& path);
TensorD read_tensor_f64(const std::string& path);
MaskTensor read_mask(const std::string& path);

// In-memory encodings, used by the golden-layout tests and the writers.
std::vector<uint8_t> encode_tensor(const Tensor& t);
std::vector<uint8_t> encode_tensor(const TensorD& t);
std::vector<uint8_t> encode_tensor(const MaskTensor& t);

// Checkpoint manifests and config echoes: UTF-8 lines `key = value`.
// Keys keep file order; duplicate keys are rejected.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

void write_key_values(const std::string& path, const KeyValues& kv);
KeyValues read_key_values(const std::string& path);
std::string lookup(const KeyValues& kv, const std::string& key);
const std::string* find(const KeyValues& kv, const std::string& key);

// Minimal CSV emission; all reports in this artifact are CSV.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> columns) : columns_(std::move(columns)) {}
    void add_row(const std::vector<std::string>& cells);
    void save(const std::string& path) const;
    std::string str() const;

private:
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> rows_;
};

std::string format_double(double v);

}  // namespace vigeo::io
