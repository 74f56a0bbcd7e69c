#include "omnifit/image.hpp"

#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>

#include <jpeglib.h>
#include <png.h>

namespace omnifit {

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read image '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image decode_png(const std::vector<uint8_t>& bytes, const std::string& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
        throw std::runtime_error("'" + path + "': " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&img);
        throw std::runtime_error("'" + path + "': " + img.message);
    }
    Image out;
    out.width = static_cast<int>(img.width);
    out.height = static_cast<int>(img.height);
    out.rgb.resize(buf.size());
    for (size_t i = 0; i < buf.size(); ++i) out.rgb[i] = buf[i] / 255.0f;
    return out;
}

struct JpegError {
    jpeg_error_mgr mgr;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_fail(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegError*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::vector<uint8_t>& bytes, const std::string& path) {
    jpeg_decompress_struct cinfo{};
    JpegError err{};
    cinfo.err = jpeg_std_error(&err.mgr);
    err.mgr.error_exit = jpeg_fail;
    Image out;
    std::vector<uint8_t> row;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw std::runtime_error("'" + path + "': " + err.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out.width = static_cast<int>(cinfo.output_width);
    out.height = static_cast<int>(cinfo.output_height);
    out.rgb.resize(static_cast<size_t>(out.width) * out.height * 3);
    row.resize(static_cast<size_t>(out.width) * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        const int y = static_cast<int>(cinfo.output_scanline);
        JSAMPROW rows[1] = {row.data()};
        jpeg_read_scanlines(&cinfo, rows, 1);
        for (size_t i = 0; i < row.size(); ++i) out.rgb[static_cast<size_t>(y) * row.size() + i] = row[i] / 255.0f;
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

}  // namespace

Image Image::filled(int width, int height, float r, float g, float b) {
    if (width < 1 || height < 1) throw std::invalid_argument("image dimensions must be positive");
    Image img;
    img.width = width;
    img.height = height;
    img.rgb.resize(static_cast<size_t>(width) * height * 3);
    for (size_t i = 0; i < img.rgb.size(); i += 3) {
        img.rgb[i] = r;
        img.rgb[i + 1] = g;
        img.rgb[i + 2] = b;
    }
    return img;
}

Image load_image(const std::string& path) {
    const auto bytes = read_file(path);
    static const uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::equal(png_sig, png_sig + 8, bytes.begin())) return decode_png(bytes, path);
    if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return decode_jpeg(bytes, path);
    throw std::runtime_error("'" + path + "' is neither PNG nor JPEG");
}

void save_png(const std::string& path, const Image& image) {
    if (image.rgb.size() != static_cast<size_t>(image.width) * image.height * 3) {
        throw std::invalid_argument("image buffer size disagrees with its dimensions");
    }
    std::vector<uint8_t> buf(image.rgb.size());
    for (size_t i = 0; i < buf.size(); ++i) {
        buf[i] = static_cast<uint8_t>(std::lround(std::clamp(image.rgb[i], 0.0f, 1.0f) * 255.0f));
    }
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw std::runtime_error("cannot write '" + path + "': " + img.message);
    }
}

PatchEmbedProvider::PatchEmbedProvider(int patch, int dim, uint64_t seed) : patch_(patch), dim_(dim), seed_(seed) {
    if (patch < 1 || dim < 1) throw std::invalid_argument("patch size and feature dim must be positive");
    const int in = patch * patch * 3;
    projection_.resize(in, dim);
    std::mt19937_64 rng(seed);
    nn::fill_normal(projection_, 1.0 / std::sqrt(static_cast<double>(in)), rng);
}

std::string PatchEmbedProvider::id() const {
    return "patch-embed:" + std::to_string(patch_) + ":" + std::to_string(dim_) + ":" + std::to_string(seed_);
}

PatchEmbedProvider PatchEmbedProvider::from_id(const std::string& id) {
    int patch = 0, dim = 0;
    unsigned long long seed = 0;
    char tail = 0;
    if (std::sscanf(id.c_str(), "patch-embed:%d:%d:%llu%c", &patch, &dim, &seed, &tail) != 3) {
        throw std::invalid_argument("unknown image feature source '" + id + "'");
    }
    return PatchEmbedProvider(patch, dim, seed);
}

ImageFeatures PatchEmbedProvider::extract(const Image& image) const {
    if (image.width < 1 || image.height < 1 || image.rgb.empty()) throw std::invalid_argument("empty image");
    if (image.width % patch_ != 0 || image.height % patch_ != 0) {
        throw std::invalid_argument("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                                    "; resize it to multiples of " + std::to_string(patch_) + " pixels");
    }
    const int pw = image.width / patch_, ph = image.height / patch_;
    FeatureMatrix patches(pw * ph, patch_ * patch_ * 3);
    for (int py = 0; py < ph; ++py)
        for (int px = 0; px < pw; ++px) {
            int col = 0;
            for (int y = 0; y < patch_; ++y)
                for (int x = 0; x < patch_; ++x)
                    for (int c = 0; c < 3; ++c) patches(py * pw + px, col++) = image.at(py * patch_ + y, px * patch_ + x, c);
        }
    return {patches * projection_, id()};
}

ImageFeatures extract_image_features(const Image& image, const ImageFeatureProvider& provider) {
    auto f = provider.extract(image);
    if (!f.tokens.allFinite()) throw std::runtime_error("image features contain non-finite values");
    return f;
}

ImageFeatures extract_image_features(const Image& image) { return extract_image_features(image, PatchEmbedProvider()); }

}  // namespace omnifit
