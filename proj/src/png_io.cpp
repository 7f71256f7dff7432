#include "fetalseg/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include "fetalseg/common.hpp"

namespace fetalseg {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngRead {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngRead() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    }
};

struct PngWrite {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWrite() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    }
};

// Reads raw 8-bit rows after configuring transforms; interlace handled by libpng.
std::vector<std::uint8_t> read_rows(const std::string& path, bool to_gray, int* out_h, int* out_w, int* channels,
                                    bool* was_palette) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw LoadError("png: cannot open " + path);
    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw LoadError("png: not a PNG file: " + path);

    PngRead ctx;
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw LoadError("png: reader allocation failed for " + path);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw LoadError("png: info allocation failed for " + path);
    if (setjmp(png_jmpbuf(ctx.png))) throw LoadError("png: decode error in " + path);

    png_init_io(ctx.png, file.get());
    png_set_sig_bytes(ctx.png, 8);
    png_read_info(ctx.png, ctx.info);

    const png_byte color = png_get_color_type(ctx.png, ctx.info);
    const png_byte depth = png_get_bit_depth(ctx.png, ctx.info);
    *was_palette = (color == PNG_COLOR_TYPE_PALETTE);

    if (depth == 16) png_set_strip_16(ctx.png);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        if (to_gray)
            png_set_palette_to_rgb(ctx.png);
        else if (depth < 8)
            png_set_packing(ctx.png);  // keep indices, one per byte
    }
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
    if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS) && to_gray) png_set_tRNS_to_alpha(ctx.png);
    if (to_gray) {
        if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS))
            png_set_strip_alpha(ctx.png);
        if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
            png_set_rgb_to_gray_fixed(ctx.png, 1, -1, -1);
    }
    png_read_update_info(ctx.png, ctx.info);

    const int h = static_cast<int>(png_get_image_height(ctx.png, ctx.info));
    const int w = static_cast<int>(png_get_image_width(ctx.png, ctx.info));
    const int ch = static_cast<int>(png_get_channels(ctx.png, ctx.info));
    *out_h = h;
    *out_w = w;
    *channels = ch;

    std::vector<std::uint8_t> data(static_cast<size_t>(h) * w * ch);
    std::vector<png_bytep> rows(static_cast<size_t>(h));
    for (int r = 0; r < h; ++r) rows[static_cast<size_t>(r)] = data.data() + static_cast<size_t>(r) * w * ch;
    png_read_image(ctx.png, rows.data());
    png_read_end(ctx.png, nullptr);
    return data;
}

}  // namespace

ImageF read_png_gray(const std::string& path) {
    int h = 0, w = 0, ch = 0;
    bool palette = false;
    auto data = read_rows(path, true, &h, &w, &ch, &palette);
    if (ch != 1) throw LoadError("png: unexpected channel count after gray conversion in " + path);
    ImageF out(h, w);
    for (size_t i = 0; i < out.px.size(); ++i) out.px[i] = static_cast<float>(data[i]) / 255.0f;
    return out;
}

MaskU8 read_png_mask(const std::string& path) {
    int h = 0, w = 0, ch = 0;
    bool palette = false;
    auto data = read_rows(path, false, &h, &w, &ch, &palette);
    if (ch != 1) throw LoadError("png: mask must be indexed or grayscale: " + path);
    MaskU8 out(h, w);
    out.px.assign(data.begin(), data.end());
    return out;
}

void write_png_gray(const ImageF& image, const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw LoadError("png: cannot open for write: " + path);
    PngWrite ctx;
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw LoadError("png: writer allocation failed for " + path);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw LoadError("png: info allocation failed for " + path);
    if (setjmp(png_jmpbuf(ctx.png))) throw LoadError("png: encode error in " + path);

    png_init_io(ctx.png, file.get());
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(image.w), static_cast<png_uint_32>(image.h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);

    std::vector<std::uint8_t> row(static_cast<size_t>(image.w));
    for (int r = 0; r < image.h; ++r) {
        for (int c = 0; c < image.w; ++c) {
            const float v = clamp01(image.at(r, c));
            row[static_cast<size_t>(c)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
        png_write_row(ctx.png, row.data());
    }
    png_write_end(ctx.png, nullptr);
}

void write_png_mask(const MaskU8& mask, const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw LoadError("png: cannot open for write: " + path);
    PngWrite ctx;
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw LoadError("png: writer allocation failed for " + path);
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw LoadError("png: info allocation failed for " + path);
    if (setjmp(png_jmpbuf(ctx.png))) throw LoadError("png: encode error in " + path);

    png_init_io(ctx.png, file.get());
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(mask.w), static_cast<png_uint_32>(mask.h), 8,
                 PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

    // distinct colors for the 11 classes; remaining entries ramp gray
    static const png_color kClassColors[11] = {
        {0, 0, 0},       {255, 255, 255}, {120, 170, 220}, {240, 200, 60},  {220, 60, 60},  {90, 200, 90},
        {150, 90, 200},  {230, 140, 40},  {60, 200, 220},  {240, 110, 170}, {160, 160, 90},
    };
    png_color palette[256];
    for (int i = 0; i < 256; ++i) {
        if (i < 11) {
            palette[i] = kClassColors[i];
        } else {
            const auto g = static_cast<png_byte>(i);
            palette[i] = {g, g, g};
        }
    }
    png_set_PLTE(ctx.png, ctx.info, palette, 256);
    png_write_info(ctx.png, ctx.info);

    std::vector<std::uint8_t> row(static_cast<size_t>(mask.w));
    for (int r = 0; r < mask.h; ++r) {
        for (int c = 0; c < mask.w; ++c) row[static_cast<size_t>(c)] = mask.at(r, c);
        png_write_row(ctx.png, row.data());
    }
    png_write_end(ctx.png, nullptr);
}

}  // namespace fetalseg
