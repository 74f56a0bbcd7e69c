#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "omnifit/types.hpp"

namespace omnifit {

enum class DType { Float32, Float64, Int32 };

std::string_view dtype_name(DType t);
size_t dtype_size(DType t);

struct TensorRecord {
    std::string name;
    DType dtype = DType::Float32;
    std::vector<int64_t> shape;
    std::vector<uint8_t> bytes;  // little-endian, row-major

    int64_t numel() const;
};

// Named-tensor container shared by model assets, predictor checkpoints,
// adapters and scale-predictor weights.
//
// Layout:
//   [0, 8)    magic "OMNIFIT\0"
//   [8, 16)   uint64 little-endian header length H
//   [16, 16+H) UTF-8 JSON header
//   zero padding to an 8-byte boundary, then the data section
// The header carries "format_version", "kind", arbitrary metadata, and a
// "tensors" array of {name, dtype, shape, offset, nbytes} where offset is
// relative to the data section and 8-byte aligned.
class Archive {
public:
    static constexpr int kFormatVersion = 1;

    Archive() = default;
    explicit Archive(std::string kind) : kind_(std::move(kind)) {}

    const std::string& kind() const { return kind_; }
    nlohmann::json& meta() { return meta_; }
    const nlohmann::json& meta() const { return meta_; }

    void add(TensorRecord record);
    void add_f64(const std::string& name, std::vector<int64_t> shape, std::span<const double> data);
    void add_f32(const std::string& name, std::vector<int64_t> shape, std::span<const float> data);
    void add_i32(const std::string& name, std::vector<int64_t> shape, std::span<const int32_t> data);

    bool has(const std::string& name) const;
    const TensorRecord& at(const std::string& name) const;
    const std::vector<TensorRecord>& tensors() const { return tensors_; }

    // Typed reads; throw DimensionError when dtype or element count disagree.
    std::vector<double> f64(const std::string& name, int64_t expected_numel = -1) const;
    std::vector<float> f32(const std::string& name, int64_t expected_numel = -1) const;
    std::vector<int32_t> i32(const std::string& name, int64_t expected_numel = -1) const;

    std::vector<uint8_t> serialize() const;
    static Archive deserialize(std::span<const uint8_t> bytes);

    void save(const std::string& path) const;
    static Archive load(const std::string& path);

private:
    std::string kind_;
    nlohmann::json meta_ = nlohmann::json::object();
    std::vector<TensorRecord> tensors_;
};

// Hex SHA-256.
std::string sha256_hex(std::span<const uint8_t> bytes);

}  // namespace omnifit
