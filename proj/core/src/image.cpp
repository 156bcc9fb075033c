#include "odpg/image.hpp"

#include <png.h>

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <memory>

#include "odpg/errors.hpp"

namespace odpg {

ImageU8 tensor_to_u8(const Tensor& img) {
    if (img.dim() != 3 || img.size(0) != 3) {
        throw DimensionError("tensor_to_u8: expected [3,H,W], got " + shape_str(img.shape()));
    }
    ImageU8 out;
    out.height = img.size(1);
    out.width = img.size(2);
    out.rgb.resize(static_cast<std::size_t>(3) * out.width * out.height);
    const int hw = out.width * out.height;
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < hw; ++i) {
            const double v = (static_cast<double>(img.data()[c * hw + i]) + 1.0) * 0.5 * 255.0;
            const long q = std::lround(std::min(255.0, std::max(0.0, v)));
            out.rgb[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)] =
                static_cast<std::uint8_t>(q);
        }
    }
    return out;
}

Tensor u8_to_tensor(const ImageU8& img) {
    Tensor out({3, img.height, img.width});
    const int hw = img.width * img.height;
    for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < hw; ++i) {
            const double v = img.rgb[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)];
            out.data()[c * hw + i] = static_cast<float>(v / 255.0 * 2.0 - 1.0);
        }
    }
    return out;
}

void write_png(const std::string& path, const ImageU8& img) {
    std::FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("write_png: cannot open " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw IoError("write_png: failed writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y) {
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
            img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3);
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

ImageU8 read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("read_png: cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("read_png: corrupt file " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    ImageU8 out;
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw IoError("read_png: expected RGB data in " + path);
    }
    out.rgb.resize(static_cast<std::size_t>(3) * out.width * out.height);
    std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) {
        rows[static_cast<std::size_t>(y)] =
            out.rgb.data() + static_cast<std::size_t>(y) * out.width * 3;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return out;
}

std::string sha256_bytes(const void* data, std::size_t n) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                                &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data, n) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
        throw NumericalError("sha256: digest computation failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_file(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("sha256: cannot open " + path);
    std::string bytes;
    char buf[65536];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof(buf), fp)) > 0) bytes.append(buf, got);
    std::fclose(fp);
    return sha256_bytes(bytes.data(), bytes.size());
}

}  // namespace odpg
