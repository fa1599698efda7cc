#include "fb/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "fb/image_io.hpp"
#include "fb/rng.hpp"

namespace fb {

namespace fs = std::filesystem;

void DatasetSpec::validate() const {
    if (image_size < 2) throw std::invalid_argument("dataset: image_size must be >= 2");
    if (kind == Kind::Synthetic) {
        if (num_classes < 1) throw std::invalid_argument("dataset: num_classes must be >= 1");
        if (size < 1) throw std::invalid_argument("dataset: size must be >= 1");
    } else if (root.empty()) {
        throw std::invalid_argument("dataset: folder mode needs a root path");
    }
}

Tensor Dataset::batch(const std::vector<int>& indices) const {
    if (images.empty()) throw std::invalid_argument("dataset: empty");
    const auto& first = images.front();
    Tensor out({static_cast<std::int64_t>(indices.size()), first.dim(0), first.dim(1), first.dim(2)});
    const std::int64_t per = first.numel();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Tensor& img = images.at(static_cast<std::size_t>(indices[i]));
        std::copy(img.ptr(), img.ptr() + per, out.ptr() + static_cast<std::int64_t>(i) * per);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes
// ---------------------------------------------------------------------------

namespace {

// small fixed palette; classes cycle through it
constexpr double kPalette[6][3] = {
    {1.0, 0.2, 0.2}, {0.2, 0.6, 1.0}, {0.3, 1.0, 0.3},
    {1.0, 0.9, 0.2}, {0.9, 0.3, 1.0}, {0.4, 1.0, 0.9},
};

Tensor render_shape(int image_size, int cls, Rng& rng) {
    Tensor img({image_size, image_size, 3});
    img.fill(-1.0);

    const double* color = kPalette[cls % 6];
    const double n = image_size;
    const double cx = n * (0.35 + 0.3 * rng.uniform());
    const double cy = n * (0.35 + 0.3 * rng.uniform());
    const double radius = n * (0.18 + 0.14 * rng.uniform());

    const bool disk = (cls % 2 == 0);
    for (int y = 0; y < image_size; ++y) {
        for (int x = 0; x < image_size; ++x) {
            double cover;
            if (disk) {
                const double d = std::hypot(x + 0.5 - cx, y + 0.5 - cy);
                cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);  // soft 1px edge
            } else {
                const double dx = std::abs(x + 0.5 - cx), dy = std::abs(y + 0.5 - cy);
                cover = std::clamp(radius + 0.5 - std::max(dx, dy), 0.0, 1.0);
            }
            if (cover <= 0.0) continue;
            double* p = img.ptr() + (static_cast<std::int64_t>(y) * image_size + x) * 3;
            for (int q = 0; q < 3; ++q) p[q] = -1.0 + cover * (color[q] + 1.0);
        }
    }
    return img;
}

Dataset load_synthetic(const DatasetSpec& spec) {
    Dataset out;
    out.num_classes = spec.num_classes;
    Rng rng(spec.seed);
    out.images.reserve(spec.size);
    out.labels.reserve(spec.size);
    for (int i = 0; i < spec.size; ++i) {
        const int cls = i % spec.num_classes;
        out.images.push_back(render_shape(spec.image_size, cls, rng));
        out.labels.push_back(cls);
    }
    for (int c = 0; c < spec.num_classes; ++c)
        out.class_names.push_back("synthetic_" + std::to_string(c));
    return out;
}

// center-crop to square then bilinear resize
Tensor crop_resize(const Tensor& src, int out_size) {
    const int h = static_cast<int>(src.dim(0)), w = static_cast<int>(src.dim(1));
    const int side = std::min(h, w);
    const int oy = (h - side) / 2, ox = (w - side) / 2;
    Tensor out({out_size, out_size, 3});
    const double scale = static_cast<double>(side) / out_size;
    for (int y = 0; y < out_size; ++y) {
        for (int x = 0; x < out_size; ++x) {
            const double sy = std::min((y + 0.5) * scale - 0.5 + oy, h - 1.0);
            const double sx = std::min((x + 0.5) * scale - 0.5 + ox, w - 1.0);
            const int y0 = std::max(0, static_cast<int>(std::floor(sy)));
            const int x0 = std::max(0, static_cast<int>(std::floor(sx)));
            const int y1 = std::min(h - 1, y0 + 1), x1 = std::min(w - 1, x0 + 1);
            const double fy = std::clamp(sy - y0, 0.0, 1.0), fx = std::clamp(sx - x0, 0.0, 1.0);
            for (int q = 0; q < 3; ++q) {
                const double a = src[(static_cast<std::int64_t>(y0) * w + x0) * 3 + q];
                const double b = src[(static_cast<std::int64_t>(y0) * w + x1) * 3 + q];
                const double c = src[(static_cast<std::int64_t>(y1) * w + x0) * 3 + q];
                const double d = src[(static_cast<std::int64_t>(y1) * w + x1) * 3 + q];
                out[(static_cast<std::int64_t>(y) * out_size + x) * 3 + q] =
                    (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
            }
        }
    }
    return out;
}

Dataset load_folder(const DatasetSpec& spec) {
    if (!fs::is_directory(spec.root))
        throw std::invalid_argument("dataset: not a directory: " + spec.root);

    std::vector<std::string> classes;
    for (const auto& e : fs::directory_iterator(spec.root))
        if (e.is_directory()) classes.push_back(e.path().filename().string());
    std::sort(classes.begin(), classes.end());
    if (classes.empty()) throw std::invalid_argument("dataset: no class subdirectories in " + spec.root);

    Dataset out;
    out.num_classes = static_cast<int>(classes.size());
    out.class_names = classes;
    for (int c = 0; c < out.num_classes; ++c) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(spec.root) / classes[c]))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        int loaded = 0;
        for (const auto& f : files) {
            try {
                Tensor img = read_png(f);
                out.images.push_back(crop_resize(img, spec.image_size));
                out.labels.push_back(c);
                ++loaded;
            } catch (const std::exception&) {
                ++out.skipped;
            }
        }
        if (loaded == 0)
            throw std::invalid_argument("dataset: class '" + classes[c] + "' has no readable images");
    }
    return out;
}

}  // namespace

Dataset load_dataset(const DatasetSpec& spec) {
    spec.validate();
    return spec.kind == DatasetSpec::Kind::Synthetic ? load_synthetic(spec) : load_folder(spec);
}

}  // namespace fb
