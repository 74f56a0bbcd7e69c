#include "omnifit/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <openssl/evp.h>

namespace omnifit {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'O', 'M', 'N', 'I', 'F', 'I', 'T', '\0'};

size_t align8(size_t n) { return (n + 7) & ~size_t{7}; }

DType parse_dtype(const std::string& s) {
    if (s == "float32") return DType::Float32;
    if (s == "float64") return DType::Float64;
    if (s == "int32") return DType::Int32;
    throw std::runtime_error("unknown tensor dtype '" + s + "'");
}

template <typename T>
std::vector<T> typed_read(const TensorRecord& rec, DType want, int64_t expected) {
    if (rec.dtype != want) {
        throw DimensionError("tensor '" + rec.name + "' has dtype " + std::string(dtype_name(rec.dtype)) +
                             ", expected " + std::string(dtype_name(want)));
    }
    if (expected >= 0 && rec.numel() != expected) {
        throw DimensionError("tensor '" + rec.name + "' has " + std::to_string(rec.numel()) + " elements, expected " +
                             std::to_string(expected));
    }
    std::vector<T> out(static_cast<size_t>(rec.numel()));
    std::memcpy(out.data(), rec.bytes.data(), rec.bytes.size());
    return out;
}

template <typename T>
TensorRecord make_record(const std::string& name, DType dtype, std::vector<int64_t> shape, std::span<const T> data) {
    TensorRecord rec;
    rec.name = name;
    rec.dtype = dtype;
    rec.shape = std::move(shape);
    if (rec.numel() != static_cast<int64_t>(data.size())) {
        throw DimensionError("tensor '" + name + "' shape does not match its " + std::to_string(data.size()) +
                             " elements");
    }
    rec.bytes.resize(data.size_bytes());
    std::memcpy(rec.bytes.data(), data.data(), data.size_bytes());
    return rec;
}

}  // namespace

std::string_view dtype_name(DType t) {
    switch (t) {
        case DType::Float32: return "float32";
        case DType::Float64: return "float64";
        case DType::Int32: return "int32";
    }
    return "float32";
}

size_t dtype_size(DType t) { return t == DType::Float64 ? 8 : 4; }

int64_t TensorRecord::numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

void Archive::add(TensorRecord record) {
    if (has(record.name)) throw std::invalid_argument("duplicate tensor '" + record.name + "'");
    if (static_cast<size_t>(record.numel()) * dtype_size(record.dtype) != record.bytes.size()) {
        throw DimensionError("tensor '" + record.name + "' byte size does not match its shape");
    }
    tensors_.push_back(std::move(record));
}

void Archive::add_f64(const std::string& name, std::vector<int64_t> shape, std::span<const double> data) {
    add(make_record(name, DType::Float64, std::move(shape), data));
}
void Archive::add_f32(const std::string& name, std::vector<int64_t> shape, std::span<const float> data) {
    add(make_record(name, DType::Float32, std::move(shape), data));
}
void Archive::add_i32(const std::string& name, std::vector<int64_t> shape, std::span<const int32_t> data) {
    add(make_record(name, DType::Int32, std::move(shape), data));
}

bool Archive::has(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return true;
    return false;
}

const TensorRecord& Archive::at(const std::string& name) const {
    for (const auto& t : tensors_)
        if (t.name == name) return t;
    throw std::out_of_range("archive (kind '" + kind_ + "') has no tensor '" + name + "'");
}

std::vector<double> Archive::f64(const std::string& name, int64_t expected) const {
    return typed_read<double>(at(name), DType::Float64, expected);
}
std::vector<float> Archive::f32(const std::string& name, int64_t expected) const {
    return typed_read<float>(at(name), DType::Float32, expected);
}
std::vector<int32_t> Archive::i32(const std::string& name, int64_t expected) const {
    return typed_read<int32_t>(at(name), DType::Int32, expected);
}

std::vector<uint8_t> Archive::serialize() const {
    nlohmann::json header = meta_;
    header["format_version"] = kFormatVersion;
    header["kind"] = kind_;
    auto list = nlohmann::json::array();
    size_t offset = 0;
    for (const auto& t : tensors_) {
        list.push_back({{"name", t.name},
                        {"dtype", std::string(dtype_name(t.dtype))},
                        {"shape", t.shape},
                        {"offset", offset},
                        {"nbytes", t.bytes.size()}});
        offset = align8(offset + t.bytes.size());
    }
    header["tensors"] = std::move(list);
    const std::string text = header.dump();

    const size_t data_start = align8(16 + text.size());
    std::vector<uint8_t> out(data_start + offset, 0);
    std::memcpy(out.data(), kMagic, 8);
    const uint64_t hlen = text.size();
    std::memcpy(out.data() + 8, &hlen, 8);
    std::memcpy(out.data() + 16, text.data(), text.size());
    size_t pos = 0;
    for (const auto& t : tensors_) {
        std::memcpy(out.data() + data_start + pos, t.bytes.data(), t.bytes.size());
        pos = align8(pos + t.bytes.size());
    }
    return out;
}

Archive Archive::deserialize(std::span<const uint8_t> bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw std::runtime_error("not an omnifit archive (bad magic)");
    }
    uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 8, 8);
    if (16 + hlen > bytes.size()) throw std::runtime_error("truncated archive header");
    nlohmann::json header =
        nlohmann::json::parse(std::string(reinterpret_cast<const char*>(bytes.data()) + 16, hlen));
    if (!header.contains("format_version")) throw std::runtime_error("archive header lacks format_version");
    const int version = header.at("format_version").get<int>();
    if (version != kFormatVersion) {
        throw std::runtime_error("unsupported archive format_version " + std::to_string(version));
    }
    const size_t data_start = align8(16 + hlen);

    Archive a(header.at("kind").get<std::string>());
    for (const auto& t : header.at("tensors")) {
        TensorRecord rec;
        rec.name = t.at("name").get<std::string>();
        rec.dtype = parse_dtype(t.at("dtype").get<std::string>());
        rec.shape = t.at("shape").get<std::vector<int64_t>>();
        const size_t off = t.at("offset").get<size_t>();
        const size_t n = t.at("nbytes").get<size_t>();
        if (data_start + off + n > bytes.size()) throw std::runtime_error("tensor '" + rec.name + "' is truncated");
        rec.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_start + off),
                         bytes.begin() + static_cast<std::ptrdiff_t>(data_start + off + n));
        a.add(std::move(rec));
    }
    header.erase("tensors");
    header.erase("kind");
    header.erase("format_version");
    a.meta_ = std::move(header);
    return a;
}

void Archive::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write archive '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing archive '" + path + "'");
}

Archive Archive::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read archive '" + path + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return deserialize(bytes);
    } catch (const std::exception& e) {
        throw std::runtime_error("'" + path + "': " + e.what());
    }
}

std::string sha256_hex(std::span<const uint8_t> bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("SHA-256 failed");
    }
    EVP_MD_CTX_free(ctx);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 15]);
    }
    return out;
}

}  // namespace omnifit
