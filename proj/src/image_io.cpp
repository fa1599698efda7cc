#include "fb/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace fb {

int quantize_pixel(double v) {
    const double scaled = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5 * 255.0;
    // nearbyint honors the default FE_TONEAREST mode: round-half-to-even
    return static_cast<int>(std::nearbyint(scaled));
}

namespace {

struct FileCloser {
    std::FILE* f = nullptr;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

}  // namespace

void write_png(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3) throw std::invalid_argument("write_png: expected H x W x C");
    const int h = static_cast<int>(image.dim(0));
    const int w = static_cast<int>(image.dim(1));
    const int c = static_cast<int>(image.dim(2));
    if (c != 1 && c != 3) throw std::invalid_argument("write_png: channels must be 1 or 3");

    FileCloser file{std::fopen(path.c_str(), "wb")};
    if (!file.f) throw std::runtime_error("write_png: cannot open " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng error writing " + path);
    }
    png_init_io(png, file.f);
    png_set_IHDR(png, info, w, h, 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<std::size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int q = 0; q < c; ++q)
                row[static_cast<std::size_t>(x) * c + q] = static_cast<png_byte>(
                    quantize_pixel(image[(static_cast<std::int64_t>(y) * w + x) * c + q]));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::string& path) {
    FileCloser file{std::fopen(path.c_str(), "rb")};
    if (!file.f) throw std::runtime_error("read_png: cannot open " + path);

    png_byte header[8];
    if (std::fread(header, 1, 8, file.f) != 8 || png_sig_cmp(header, 0, 8) != 0)
        throw std::runtime_error("read_png: not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng error reading " + path);
    }
    png_init_io(png, file.f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    if (png_get_channels(png, info) != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: unsupported channel layout in " + path);
    }

    std::vector<png_byte> rowbuf(static_cast<std::size_t>(w) * 3);
    Tensor out({h, w, 3});
    for (int y = 0; y < h; ++y) {
        png_read_row(png, rowbuf.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int q = 0; q < 3; ++q)
                out[(static_cast<std::int64_t>(y) * w + x) * 3 + q] =
                    static_cast<double>(rowbuf[static_cast<std::size_t>(x) * 3 + q]) / 255.0 * 2.0 - 1.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_line_plot(const std::string& path,
                     const std::vector<std::pair<std::string, std::vector<double>>>& series,
                     int width, int height) {
    Tensor canvas({height, width, 3});
    canvas.fill(1.0);  // white

    auto put = [&](int y, int x, double r, double g, double b) {
        if (y < 0 || y >= height || x < 0 || x >= width) return;
        double* p = canvas.ptr() + (static_cast<std::int64_t>(y) * width + x) * 3;
        p[0] = r;
        p[1] = g;
        p[2] = b;
    };

    const int m = 24;  // margin
    for (int x = m; x < width - m; ++x) put(height - m, x, -1, -1, -1);
    for (int y = m; y < height - m; ++y) put(y, m, -1, -1, -1);

    double lo = 0.0, hi = 1e-300;
    std::size_t longest = 2;
    for (const auto& [name, v] : series)
        for (double e : v) {
            hi = std::max(hi, e);
            lo = std::min(lo, e);
        }
    for (const auto& [name, v] : series) longest = std::max(longest, v.size());
    if (hi <= lo) hi = lo + 1.0;

    const double palette[6][3] = {{-1, -1, 1},    {1, -1, -1},  {-1, 0.4, -1},
                                  {0.6, -1, 0.6}, {0.8, 0.4, -1}, {-1, 0.6, 0.8}};
    int color = 0;
    for (const auto& [name, v] : series) {
        const double* rgb = palette[color++ % 6];
        for (std::size_t i = 0; i + 1 < v.size(); ++i) {
            double x0 = m + (width - 2.0 * m) * static_cast<double>(i) / (longest - 1);
            double x1 = m + (width - 2.0 * m) * static_cast<double>(i + 1) / (longest - 1);
            double y0 = (height - m) - (height - 2.0 * m) * (v[i] - lo) / (hi - lo);
            double y1 = (height - m) - (height - 2.0 * m) * (v[i + 1] - lo) / (hi - lo);
            const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
            for (int s = 0; s <= steps; ++s) {
                double a = static_cast<double>(s) / steps;
                put(static_cast<int>(std::lround(y0 + a * (y1 - y0))),
                    static_cast<int>(std::lround(x0 + a * (x1 - x0))), rgb[0], rgb[1], rgb[2]);
            }
        }
    }
    write_png(path, canvas);
}

}  // namespace fb
