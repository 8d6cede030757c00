#include "hug/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

namespace hug {
namespace {

constexpr std::size_t kMaxPixels = std::size_t{1} << 28;

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void check_dimensions(long long w, long long h, const std::filesystem::path& path) {
    if (w < 1 || h < 1) throw ParseError(path.string() + ": invalid image dimensions");
    if (static_cast<unsigned long long>(w) * static_cast<unsigned long long>(h) > kMaxPixels)
        throw ParseError(path.string() + ": image dimensions overflow");
}

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw IoError("cannot open " + path.string());
    return f;
}

// libpng reports through longjmp; the default handlers would also print.
void png_quiet_error(png_structp png, png_const_charp) { png_longjmp(png, 1); }
void png_quiet_warning(png_structp, png_const_charp) {}

// PNG rows are decoded into 8-bit RGB or gray + optional alpha.
std::vector<std::uint8_t> read_png_rows(const std::filesystem::path& path, int& width, int& height, int& channels) {
    auto file = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_quiet_error, png_quiet_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng initialisation failed");
    }
    std::vector<std::uint8_t> buffer;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError(path.string() + ": malformed PNG");
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    check_dimensions(w, h, path);
    png_set_strip_16(png);
    png_set_packing(png);
    const int color_type = png_get_color_type(png, info);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_read_update_info(png, info);
    channels = png_get_channels(png, info);
    width = static_cast<int>(w);
    height = static_cast<int>(h);
    const std::size_t stride = png_get_rowbytes(png, info);
    buffer.resize(stride * height);
    rows.resize(height);
    for (int y = 0; y < height; ++y) rows[y] = buffer.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return buffer;
}

void write_png_rows(const std::filesystem::path& path, int width, int height, int color_type,
                    const std::vector<std::uint8_t>& bytes, int channels) {
    auto file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_quiet_error, png_quiet_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng initialisation failed");
    }
    std::vector<png_bytep> rows(height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        rows[y] = const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * width * channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P6") throw ParseError(path.string() + ": not a binary PPM");
    auto next_number = [&]() -> long long {
        for (;;) {
            in >> std::ws;
            if (in.peek() == '#') {
                std::string comment;
                std::getline(in, comment);
                continue;
            }
            long long v = -1;
            if (!(in >> v)) throw ParseError(path.string() + ": malformed PPM header");
            return v;
        }
    };
    const long long w = next_number();
    const long long h = next_number();
    const long long maxval = next_number();
    if (maxval != 255) throw ParseError(path.string() + ": only maxval 255 is supported");
    check_dimensions(w, h, path);
    in.get();  // single whitespace before raster
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw ParseError(path.string() + ": truncated PPM");
    Image img(static_cast<int>(w), static_cast<int>(h));
    for (std::size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0;
    return img;
}

bool has_png_signature(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    unsigned char sig[8] = {};
    in.read(reinterpret_cast<char*>(sig), 8);
    return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
    if (!has_png_signature(path)) return read_ppm(path);
    int w = 0, h = 0, ch = 0;
    const auto bytes = read_png_rows(path, w, h, ch);
    Image img(w, h);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
        const std::uint8_t* px = bytes.data() + p * ch;
        for (int c = 0; c < 3; ++c) img.data[p * 3 + c] = (ch >= 3 ? px[c] : px[0]) / 255.0;
    }
    return img;
}

void write_image(const Image& image, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(image.data.size());
    std::transform(image.data.begin(), image.data.end(), bytes.begin(), quantize);
    if (path.extension() == ".ppm") {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot open " + path.string());
        out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("failed writing " + path.string());
        return;
    }
    write_png_rows(path, image.width, image.height, PNG_COLOR_TYPE_RGB, bytes, 3);
}

void write_bitmap_png(const Bitmap& bitmap, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes(bitmap.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = bitmap.data[i] ? 255 : 0;
    write_png_rows(path, bitmap.width, bitmap.height, PNG_COLOR_TYPE_GRAY, bytes, 1);
}

Bitmap read_bitmap_png(const std::filesystem::path& path) {
    const Image img = read_image(path);
    Bitmap bm(img.width, img.height);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) bm.data[p] = img.data[p * 3] >= 0.5 ? 1 : 0;
    return bm;
}

void write_pgm(const std::vector<double>& values, int width, int height, const std::filesystem::path& path) {
    if (values.size() != static_cast<std::size_t>(width) * height) throw ContractError("PGM size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string());
    out << "P5\n" << width << ' ' << height << "\n255\n";
    for (double v : values) out.put(static_cast<char>(quantize(v)));
}

}  // namespace hug
