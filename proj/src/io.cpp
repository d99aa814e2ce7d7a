#include "vigeo/io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vigeo::io {

namespace {

const char kMagic[4] = {'V', 'G', 'E', 'O'};

void append_u32le(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void append_u64le(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

template <class T>
std::vector<uint8_t> encode(const TensorT<T>& t, uint8_t dtype) {
    std::vector<uint8_t> out;
    out.reserve(18 + sizeof(T) * static_cast<size_t>(t.numel()));
    out.insert(out.end(), kMagic, kMagic + 4);
    append_u32le(out, kVersion);
    out.push_back(dtype);
    if (t.rank() > 255) throw FormatError("tensor rank exceeds container limit");
    out.push_back(static_cast<uint8_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) append_u64le(out, static_cast<uint64_t>(t.dim(i)));
    // Values are stored little-endian; this writer assumes a little-endian host.
    const size_t payload = sizeof(T) * static_cast<size_t>(t.numel());
    const size_t base = out.size();
    out.resize(base + payload);
    if (payload) std::memcpy(out.data() + base, t.data(), payload);
    return out;
}

struct Header {
    uint8_t dtype = 0;
    std::vector<int64_t> dims;
    size_t header_bytes = 0;
};

Header parse_header(const std::vector<uint8_t>& bytes, const std::string& path) {
    if (bytes.size() < 10)
        throw FormatError(path + ": truncated header (file shorter than fixed fields)");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError(path + ": magic mismatch (expected \"VGEO\")");
    uint32_t version = 0;
    for (int i = 0; i < 4; ++i) version |= static_cast<uint32_t>(bytes[4 + i]) << (8 * i);
    if (version != kVersion)
        throw FormatError(path + ": unsupported version " + std::to_string(version));
    Header h;
    h.dtype = bytes[8];
    if (h.dtype != kDtypeF32 && h.dtype != kDtypeF64 && h.dtype != kDtypeU8)
        throw FormatError(path + ": unknown dtype code " + std::to_string(h.dtype));
    const uint8_t ndim = bytes[9];
    h.header_bytes = 10 + 8 * static_cast<size_t>(ndim);
    if (bytes.size() < h.header_bytes)
        throw FormatError(path + ": truncated header (dims field cut short)");
    for (int i = 0; i < ndim; ++i) {
        uint64_t d = 0;
        for (int j = 0; j < 8; ++j)
            d |= static_cast<uint64_t>(bytes[10 + 8 * i + j]) << (8 * j);
        h.dims.push_back(static_cast<int64_t>(d));
    }
    return h;
}

std::vector<uint8_t> read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(path + ": cannot open for reading");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

void write_all(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(path + ": write failed");
}

template <class T>
TensorT<T> decode(const std::vector<uint8_t>& bytes, uint8_t want_dtype,
                  const std::string& path) {
    const Header h = parse_header(bytes, path);
    if (h.dtype != want_dtype)
        throw FormatError(path + ": dtype code " + std::to_string(h.dtype) +
                          " does not match requested " + std::to_string(want_dtype));
    int64_t n = 1;
    for (int64_t d : h.dims) n *= d;
    const size_t payload = sizeof(T) * static_cast<size_t>(n);
    if (bytes.size() < h.header_bytes + payload)
        throw FormatError(path + ": truncated payload (expected " + std::to_string(payload) +
                          " bytes)");
    if (bytes.size() > h.header_bytes + payload)
        throw FormatError(path + ": trailing bytes after payload");
    TensorT<T> t(h.dims);
    if (payload) std::memcpy(t.data(), bytes.data() + h.header_bytes, payload);
    return t;
}

}  // namespace

std::vector<uint8_t> encode_tensor(const Tensor& t) { return encode(t, kDtypeF32); }
std::vector<uint8_t> encode_tensor(const TensorD& t) { return encode(t, kDtypeF64); }
std::vector<uint8_t> encode_tensor(const MaskTensor& t) { return encode(t, kDtypeU8); }

void write_tensor(const std::string& path, const Tensor& t) { write_all(path, encode_tensor(t)); }
void write_tensor(const std::string& path, const TensorD& t) { write_all(path, encode_tensor(t)); }
void write_tensor(const std::string& path, const MaskTensor& t) { write_all(path, encode_tensor(t)); }

uint8_t peek_dtype(const std::string& path) {
    return parse_header(read_all(path), path).dtype;
}

Tensor read_tensor_f32(const std::string& path) {
    return decode<float>(read_all(path), kDtypeF32, path);
}

TensorD read_tensor_f64(const std::string& path) {
    return decode<double>(read_all(path), kDtypeF64, path);
}

MaskTensor read_mask(const std::string& path) {
    return decode<uint8_t>(read_all(path), kDtypeU8, path);
}

void write_key_values(const std::string& path, const KeyValues& kv) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError(path + ": cannot open for writing");
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
    if (!out) throw FormatError(path + ": write failed");
}

KeyValues read_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(path + ": cannot open for reading");
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError(path + ":" + std::to_string(lineno) + ": expected `key = value`");
        auto trim = [](std::string s) {
            const size_t a = s.find_first_not_of(" \t\r");
            const size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty())
            throw FormatError(path + ":" + std::to_string(lineno) + ": empty key");
        if (find(kv, key))
            throw FormatError(path + ":" + std::to_string(lineno) + ": duplicate key " + key);
        kv.emplace_back(key, val);
    }
    return kv;
}

const std::string* find(const KeyValues& kv, const std::string& key) {
    for (const auto& [k, v] : kv)
        if (k == key) return &v;
    return nullptr;
}

std::string lookup(const KeyValues& kv, const std::string& key) {
    const std::string* v = find(kv, key);
    if (!v) throw FormatError("missing key: " + key);
    return *v;
}

void CsvWriter::add_row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_.size())
        throw ShapeError("csv row width does not match header");
    rows_.push_back(cells);
}

std::string CsvWriter::str() const {
    std::ostringstream out;
    for (size_t i = 0; i < columns_.size(); ++i)
        out << columns_[i] << (i + 1 < columns_.size() ? "," : "\n");
    for (const auto& row : rows_)
        for (size_t i = 0; i < row.size(); ++i)
            out << row[i] << (i + 1 < row.size() ? "," : "\n");
    return out.str();
}

void CsvWriter::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError(path + ": cannot open for writing");
    out << str();
    if (!out) throw FormatError(path + ": write failed");
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

}  // namespace vigeo::io
