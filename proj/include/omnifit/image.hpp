#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omnifit/predictor.hpp"

namespace omnifit {

// H x W x 3 RGB, row-major, values in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> rgb;

    static Image filled(int width, int height, float r, float g, float b);
    float& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

// PNG or JPEG, detected from the file signature. Gray and alpha channels are
// converted to RGB.
Image load_image(const std::string& path);
void save_png(const std::string& path, const Image& image);

class ImageFeatureProvider {
public:
    virtual ~ImageFeatureProvider() = default;
    virtual ImageFeatures extract(const Image& image) const = 0;
    virtual int feature_dim() const = 0;
    virtual std::string id() const = 0;
};

// Non-overlapping square patches, each flattened and projected by a fixed
// seeded linear map: p = (H / patch) * (W / patch) tokens.
class PatchEmbedProvider final : public ImageFeatureProvider {
public:
    explicit PatchEmbedProvider(int patch = 16, int dim = 64, uint64_t seed = 0);
    ImageFeatures extract(const Image& image) const override;
    int feature_dim() const override { return dim_; }
    std::string id() const override;
    int patch() const { return patch_; }
    // Inverse of id(); throws on anything else.
    static PatchEmbedProvider from_id(const std::string& id);

private:
    int patch_;
    int dim_;
    uint64_t seed_;
    FeatureMatrix projection_;  // (patch * patch * 3) x dim
};

ImageFeatures extract_image_features(const Image& image, const ImageFeatureProvider& provider);
ImageFeatures extract_image_features(const Image& image);

}  // namespace omnifit
