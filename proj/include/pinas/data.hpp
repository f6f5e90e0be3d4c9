#pragma once

#include "pinas/rng.hpp"
#include "pinas/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace pinas::data {

enum class Split { train, search_val, calibration, test };
const char* split_name(Split s);

// Images are (N, C, H, W) with values in [0, 1].
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    int num_classes = 0;
    Split split = Split::train;
    // Positions of these samples in the dataset they were drawn from.
    std::vector<int> source_indices;

    int size() const { return static_cast<int>(labels.size()); }
    int channels() const { return images.dim(1); }
    int height() const { return images.dim(2); }
    int width() const { return images.dim(3); }
    Tensor image(int i) const;
    Dataset subset(const std::vector<int>& indices, Split split) const;
    std::vector<int> class_histogram() const;
};

// ---- CIFAR-10 binary format: records of 1 label byte + 3072 pixel bytes
// (1024 R, then 1024 G, then 1024 B, each plane row-major, 32x32).
inline constexpr std::size_t kCifarRecordBytes = 3073;

// `path` is a single batch file or a directory; for a directory every
// data_batch_*.bin is loaded in name order (the official train split).
Dataset load_cifar10(const std::string& path);
void write_cifar10(const std::string& path, const Dataset& ds);

// ---- Seeded synthetic data. Each image holds a large and a small Gaussian
// blob; the displacement from the large to the small one encodes the class.
// The pair is translated at random and the horizontal component of the
// displacement has a random sign, so horizontal flips preserve the label.
// Every channel carries the same geometry under a random per-channel tint,
// so colour augmentations cannot erase the class. Recognizing a class needs a
// receptive field spanning both blobs.
struct SyntheticSpec {
    int num_classes = 4;
    int image_size = 16;
    int channels = 2;
    int train_per_class = 256;
    int test_per_class = 128;
    double blob_sigma = 1.2;
    double small_blob_sigma = 0.7;
    double offset = 4.0;
    double angle_jitter = 0.0;   // fraction of the class sector, per instance
    double offset_jitter = 0.25;  // relative, per instance
    double size_jitter = 0.3;     // relative blob-width jitter, per instance
    double position_jitter = 3.0;
    double amplitude_jitter = 0.25;
    double tint_jitter = 0.5;
    double noise = 0.05;
};

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed, Split split);

struct Splits {
    Dataset train;
    Dataset search_val;
    Dataset calibration;
};

// Class-balanced, disjoint split: per class, `per_class_val` samples go to
// search_val, the next `per_class_calib` to calibration, the rest to train.
Splits make_splits(const Dataset& ds, int per_class_val, int per_class_calib, std::uint64_t seed);

// ---- Augmentation. Ops apply in the fixed order listed in the struct.
struct AugmentPolicy {
    bool random_resize_crop = true;
    double crop_scale_min = 0.2;
    double crop_scale_max = 1.0;
    double crop_ratio_min = 3.0 / 4.0;
    double crop_ratio_max = 4.0 / 3.0;

    double flip_prob = 0.5;

    double jitter_prob = 0.8;
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    double hue = 0.1;

    double drop_prob = 0.2;

    double blur_prob = 0.5;
    double blur_sigma_min = 0.1;
    double blur_sigma_max = 2.0;

    static AugmentPolicy none();
    static AugmentPolicy crop_flip(double scale_min = 0.2);
};

// One stochastic augmentation of a (C, H, W) image; output keeps the shape.
Tensor augment(const Tensor& image, const AugmentPolicy& policy, Rng& rng);
std::array<Tensor, 4> four_views(const Tensor& image, const AugmentPolicy& policy, Rng& rng);

// Building blocks, exposed for testing.
Tensor resized_crop(const Tensor& image, double top, double left, double height, double width);
Tensor horizontal_flip(const Tensor& image);
Tensor color_drop(const Tensor& image);
// Separable Gaussian blur, radius ceil(3 sigma) (at least 1), clamp-to-edge
// borders.
Tensor gaussian_blur(const Tensor& image, double sigma);
std::vector<float> gaussian_kernel(double sigma);

// Stack (C, H, W) images into (N, C, H, W) and apply (x - mean[c]) / std[c].
Tensor make_batch(const std::vector<Tensor>& images, const std::vector<float>& mean, const std::vector<float>& stdev);
Tensor normalize_batch(Tensor batch, const std::vector<float>& mean, const std::vector<float>& stdev);

}  // namespace pinas::data
