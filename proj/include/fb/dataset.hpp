#pragma once

#include <string>
#include <vector>

#include "fb/tensor.hpp"

namespace fb {

struct DatasetSpec {
    enum class Kind { Synthetic, Folder };
    Kind kind = Kind::Synthetic;
    int image_size = 8;
    int num_classes = 2;     // synthetic mode
    std::string root;        // folder mode: one subdirectory per class
    std::uint64_t seed = 0;  // synthetic mode
    int size = 64;           // synthetic mode: total image count

    void validate() const;
    bool operator==(const DatasetSpec&) const = default;
};

// In-memory dataset; images are H x W x 3 in [-1, 1].
struct Dataset {
    std::vector<Tensor> images;
    std::vector<int> labels;
    std::vector<std::string> class_names;
    int num_classes = 0;
    int skipped = 0;  // unreadable files (folder mode)

    Tensor batch(const std::vector<int>& indices) const;  // [B, H, W, 3]
};

// Synthetic mode renders class-distinct filled shapes (disks for even class
// ids, rectangles for odd) with jittered position/size and a per-class color.
// Folder mode maps subdirectory names to labels sorted lexicographically,
// center-crops to square and bilinearly resizes to image_size.
Dataset load_dataset(const DatasetSpec& spec);

}  // namespace fb
