#include "pinas/data.hpp"

#include "pinas/error.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace pinas::data {

namespace fs = std::filesystem;

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::search_val: return "search_val";
        case Split::calibration: return "calibration";
        case Split::test: return "test";
    }
    return "?";
}

Tensor Dataset::image(int i) const {
    if (i < 0 || i >= size()) throw ContractError("dataset index out of range");
    const int c = channels(), h = height(), w = width();
    const std::size_t stride = static_cast<std::size_t>(c) * h * w;
    return Tensor({c, h, w}, std::vector<float>(images.data() + i * stride, images.data() + (i + 1) * stride));
}

Dataset Dataset::subset(const std::vector<int>& indices, Split split_tag) const {
    Dataset out;
    out.num_classes = num_classes;
    out.split = split_tag;
    Shape s = images.shape();
    s[0] = static_cast<int>(indices.size());
    const std::size_t stride = images.size() / std::max(1, size());
    std::vector<float> v;
    v.reserve(stride * indices.size());
    for (int i : indices) {
        if (i < 0 || i >= size()) throw ContractError("subset index out of range");
        v.insert(v.end(), images.data() + i * stride, images.data() + (i + 1) * stride);
        out.labels.push_back(labels[i]);
        out.source_indices.push_back(source_indices.empty() ? i : source_indices[i]);
    }
    out.images = Tensor(std::move(s), std::move(v));
    return out;
}

std::vector<int> Dataset::class_histogram() const {
    std::vector<int> h(num_classes, 0);
    for (int l : labels) ++h.at(l);
    return h;
}

// ---------------------------------------------------------------- CIFAR-10

namespace {

void append_cifar_file(const fs::path& file, std::vector<float>& pixels, std::vector<int>& labels) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IngestionError("cannot open CIFAR-10 file " + file.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty()) throw IngestionError("CIFAR-10 file " + file.string() + " is empty");
    if (bytes.size() % kCifarRecordBytes != 0) {
        if (bytes.size() % 3074 == 0)
            throw IngestionError("unknown record size in " + file.string() +
                                 ": file is a whole number of 3074-byte records (CIFAR-100 layout?), expected 3073");
        const std::size_t whole = bytes.size() / kCifarRecordBytes;
        throw IngestionError("CIFAR-10 file " + file.string() + " truncated: partial record at byte offset " +
                             std::to_string(whole * kCifarRecordBytes));
    }
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    for (std::size_t r = 0; r < n; ++r) {
        const unsigned char* rec = bytes.data() + r * kCifarRecordBytes;
        if (rec[0] > 9)
            throw IngestionError("invalid CIFAR-10 label " + std::to_string(rec[0]) + " at byte offset " +
                                 std::to_string(r * kCifarRecordBytes));
        labels.push_back(rec[0]);
        for (std::size_t i = 1; i < kCifarRecordBytes; ++i) pixels.push_back(static_cast<float>(rec[i]) / 255.0f);
    }
}

}  // namespace

Dataset load_cifar10(const std::string& path) {
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path)) {
            const auto name = e.path().filename().string();
            if (name.rfind("data_batch_", 0) == 0 && e.path().extension() == ".bin") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw IngestionError("no data_batch_*.bin files in " + path);
    } else {
        files.emplace_back(path);
    }
    std::vector<float> pixels;
    std::vector<int> labels;
    for (const auto& f : files) append_cifar_file(f, pixels, labels);
    Dataset ds;
    ds.num_classes = 10;
    ds.labels = std::move(labels);
    ds.images = Tensor({ds.size(), 3, 32, 32}, std::move(pixels));
    return ds;
}

void write_cifar10(const std::string& path, const Dataset& ds) {
    if (ds.channels() != 3 || ds.height() != 32 || ds.width() != 32)
        throw ConfigError("write_cifar10 requires (N,3,32,32) images");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot open " + path + " for writing");
    const std::size_t stride = 3072;
    for (int i = 0; i < ds.size(); ++i) {
        out.put(static_cast<char>(ds.labels[i]));
        for (std::size_t k = 0; k < stride; ++k) {
            const float v = std::clamp(ds.images[i * stride + k], 0.0f, 1.0f);
            out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
        }
    }
    if (!out) throw IngestionError("failed writing " + path);
}

// ---------------------------------------------------------------- synthetic

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed, Split split) {
    if (spec.num_classes < 2 || spec.channels < 1 || spec.image_size < 4)
        throw ConfigError("synthetic dataset needs >= 2 classes, >= 1 channel and image_size >= 4");
    const int per_class = split == Split::test ? spec.test_per_class : spec.train_per_class;
    Rng rng(derive_seed(seed, split == Split::test ? "synthetic.test" : "synthetic.train"));
    const int s = spec.image_size;
    const int n = per_class * spec.num_classes;
    Dataset ds;
    ds.num_classes = spec.num_classes;
    ds.split = split;
    ds.images = Tensor({n, spec.channels, s, s});
    ds.labels.resize(n);
    const double two_sigma2 = 2.0 * spec.blob_sigma * spec.blob_sigma;
    const double two_small2 = 2.0 * spec.small_blob_sigma * spec.small_blob_sigma;
    const double centre = (s - 1) / 2.0;
    for (int i = 0; i < n; ++i) {
        const int k = i % spec.num_classes;
        ds.labels[i] = k;
        const double sector = std::numbers::pi / (spec.num_classes - 1);
        const double theta = -std::numbers::pi / 2 + sector * k + spec.angle_jitter * sector * rng.uniform(-0.5, 0.5);
        const double len = spec.offset * (1.0 + spec.offset_jitter * rng.uniform(-1.0, 1.0));
        double dx = len * std::cos(theta);
        const double dy = len * std::sin(theta);
        if (rng.bernoulli(0.5)) dx = -dx;
        const double tx = rng.uniform(-spec.position_jitter, spec.position_jitter);
        const double ty = rng.uniform(-spec.position_jitter, spec.position_jitter);
        const double ax = centre + tx - dx / 2, ay = centre + ty - dy / 2;
        const double bx = ax + dx, by = ay + dy;
        const double amp_a = 1.0 - spec.amplitude_jitter * rng.uniform();
        const double amp_b = 1.0 - spec.amplitude_jitter * rng.uniform();
        const double sa = 1.0 + spec.size_jitter * rng.uniform(-1.0, 1.0);
        const double sb = 1.0 + spec.size_jitter * rng.uniform(-1.0, 1.0);
        const double wa = two_sigma2 * sa * sa, wb = two_small2 * sb * sb;
        std::vector<double> tint(spec.channels);
        for (auto& t : tint) t = 1.0 - spec.tint_jitter * rng.uniform();
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                const double ga = amp_a * std::exp(-((x - ax) * (x - ax) + (y - ay) * (y - ay)) / wa);
                const double gb = amp_b * std::exp(-((x - bx) * (x - bx) + (y - by) * (y - by)) / wb);
                for (int c = 0; c < spec.channels; ++c) {
                    const double v = tint[c] * (ga + gb) + spec.noise * rng.normal();
                    ds.images.at(i, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
    }
    return ds;
}

// ---------------------------------------------------------------- splits

Splits make_splits(const Dataset& ds, int per_class_val, int per_class_calib, std::uint64_t seed) {
    if (per_class_val < 0 || per_class_calib < 0) throw ConfigError("split counts must be non-negative");
    std::vector<std::vector<int>> by_class(ds.num_classes);
    for (int i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);
    Rng rng(derive_seed(seed, "splits"));
    std::vector<int> train, val, calib;
    for (int k = 0; k < ds.num_classes; ++k) {
        auto& idx = by_class[k];
        if (static_cast<int>(idx.size()) < per_class_val + per_class_calib)
            throw ConfigError("class " + std::to_string(k) + " has " + std::to_string(idx.size()) +
                              " samples; cannot take " + std::to_string(per_class_val) + " val + " +
                              std::to_string(per_class_calib) + " calibration");
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
        val.insert(val.end(), idx.begin(), idx.begin() + per_class_val);
        calib.insert(calib.end(), idx.begin() + per_class_val, idx.begin() + per_class_val + per_class_calib);
        train.insert(train.end(), idx.begin() + per_class_val + per_class_calib, idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    std::sort(calib.begin(), calib.end());
    return {ds.subset(train, Split::train), ds.subset(val, Split::search_val),
            ds.subset(calib, Split::calibration)};
}

// ---------------------------------------------------------------- augmentation

AugmentPolicy AugmentPolicy::none() {
    AugmentPolicy p;
    p.random_resize_crop = false;
    p.flip_prob = 0.0;
    p.jitter_prob = 0.0;
    p.drop_prob = 0.0;
    p.blur_prob = 0.0;
    return p;
}

AugmentPolicy AugmentPolicy::crop_flip(double scale_min) {
    AugmentPolicy p = none();
    p.random_resize_crop = true;
    p.crop_scale_min = scale_min;
    p.flip_prob = 0.5;
    return p;
}

namespace {

void clamp01(Tensor& t) {
    for (auto& v : t.values()) v = std::clamp(v, 0.0f, 1.0f);
}

// Per-pixel grey level, (H, W).
std::vector<float> grey(const Tensor& img) {
    const int c = img.dim(0), hw = img.dim(1) * img.dim(2);
    std::vector<float> g(hw, 0.0f);
    if (c == 3) {
        for (int i = 0; i < hw; ++i) g[i] = 0.299f * img[i] + 0.587f * img[hw + i] + 0.114f * img[2 * hw + i];
    } else {
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < hw; ++i) g[i] += img[ch * hw + i] / static_cast<float>(c);
    }
    return g;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
    const float mx = std::max({r, g, b}), mn = std::min({r, g, b});
    const float d = mx - mn;
    v = mx;
    s = mx > 0.0f ? d / mx : 0.0f;
    if (d <= 0.0f) {
        h = 0.0f;
        return;
    }
    if (mx == r)
        h = (g - b) / d;
    else if (mx == g)
        h = 2.0f + (b - r) / d;
    else
        h = 4.0f + (r - g) / d;
    h /= 6.0f;
    if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
    const float hh = 6.0f * (h - std::floor(h));
    const int i = static_cast<int>(hh) % 6;
    const float f = hh - std::floor(hh);
    const float p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: r = v, g = t, b = p; break;
        case 1: r = q, g = v, b = p; break;
        case 2: r = p, g = v, b = t; break;
        case 3: r = p, g = q, b = v; break;
        case 4: r = t, g = p, b = v; break;
        default: r = v, g = p, b = q; break;
    }
}

void color_jitter(Tensor& img, const AugmentPolicy& p, Rng& rng) {
    const int c = img.dim(0), hw = img.dim(1) * img.dim(2);
    if (p.brightness > 0) {
        const auto f = static_cast<float>(rng.uniform(std::max(0.0, 1 - p.brightness), 1 + p.brightness));
        for (auto& v : img.values()) v *= f;
        clamp01(img);
    }
    if (p.contrast > 0) {
        const auto f = static_cast<float>(rng.uniform(std::max(0.0, 1 - p.contrast), 1 + p.contrast));
        const auto g = grey(img);
        double m = 0.0;
        for (float v : g) m += v;
        const auto mean = static_cast<float>(m / hw);
        for (auto& v : img.values()) v = (v - mean) * f + mean;
        clamp01(img);
    }
    if (p.saturation > 0) {
        const auto f = static_cast<float>(rng.uniform(std::max(0.0, 1 - p.saturation), 1 + p.saturation));
        const auto g = grey(img);
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < hw; ++i) img[ch * hw + i] = (img[ch * hw + i] - g[i]) * f + g[i];
        clamp01(img);
    }
    if (p.hue > 0 && c == 3) {
        const auto shift = static_cast<float>(rng.uniform(-p.hue, p.hue));
        for (int i = 0; i < hw; ++i) {
            float h, s, v;
            rgb_to_hsv(img[i], img[hw + i], img[2 * hw + i], h, s, v);
            hsv_to_rgb(h + shift, s, v, img[i], img[hw + i], img[2 * hw + i]);
        }
        clamp01(img);
    }
}

}  // namespace

Tensor resized_crop(const Tensor& image, double top, double left, double height, double width) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    for (int oy = 0; oy < h; ++oy) {
        const double sy = std::clamp(top + (oy + 0.5) * height / h - 0.5, 0.0, h - 1.0);
        const int y0 = static_cast<int>(std::floor(sy));
        const int y1 = std::min(y0 + 1, h - 1);
        const double fy = sy - y0;
        for (int ox = 0; ox < w; ++ox) {
            const double sx = std::clamp(left + (ox + 0.5) * width / w - 0.5, 0.0, w - 1.0);
            const int x0 = static_cast<int>(std::floor(sx));
            const int x1 = std::min(x0 + 1, w - 1);
            const double fx = sx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const float* p = image.data() + static_cast<long>(ch) * h * w;
                const double v = (1 - fy) * ((1 - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
                                 fy * ((1 - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
                out[(static_cast<long>(ch) * h + oy) * w + ox] = static_cast<float>(v);
            }
        }
    }
    return out;
}

Tensor horizontal_flip(const Tensor& image) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor out(image.shape());
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out[(static_cast<long>(ch) * h + y) * w + x] = image[(static_cast<long>(ch) * h + y) * w + (w - 1 - x)];
    return out;
}

Tensor color_drop(const Tensor& image) {
    const int c = image.dim(0), hw = image.dim(1) * image.dim(2);
    const auto g = grey(image);
    Tensor out(image.shape());
    for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < hw; ++i) out[ch * hw + i] = std::clamp(g[i], 0.0f, 1.0f);
    return out;
}

std::vector<float> gaussian_kernel(double sigma) {
    if (!(sigma > 0)) throw ConfigError("gaussian blur sigma must be positive");
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) sum += k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    std::vector<float> out(k.size());
    for (std::size_t i = 0; i < k.size(); ++i) out[i] = static_cast<float>(k[i] / sum);
    return out;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
    const auto k = gaussian_kernel(sigma);
    const int radius = static_cast<int>(k.size() / 2);
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor tmp(image.shape()), out(image.shape());
    for (int ch = 0; ch < c; ++ch) {
        const float* src = image.data() + static_cast<long>(ch) * h * w;
        float* mid = tmp.data() + static_cast<long>(ch) * h * w;
        float* dst = out.data() + static_cast<long>(ch) * h * w;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i) s += k[i + radius] * src[y * w + std::clamp(x + i, 0, w - 1)];
                mid[y * w + x] = static_cast<float>(s);
            }
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double s = 0.0;
                for (int i = -radius; i <= radius; ++i) s += k[i + radius] * mid[std::clamp(y + i, 0, h - 1) * w + x];
                dst[y * w + x] = static_cast<float>(s);
            }
    }
    return out;
}

Tensor augment(const Tensor& image, const AugmentPolicy& p, Rng& rng) {
    if (image.ndim() != 3) throw ConfigError("augment expects a (C, H, W) image, got " + shape_str(image.shape()));
    const int h = image.dim(1), w = image.dim(2);
    Tensor out = image;
    if (p.random_resize_crop) {
        const double area = static_cast<double>(h) * w;
        const double log_lo = std::log(p.crop_ratio_min), log_hi = std::log(p.crop_ratio_max);
        bool done = false;
        for (int attempt = 0; attempt < 10 && !done; ++attempt) {
            const double target = area * rng.uniform(p.crop_scale_min, p.crop_scale_max);
            const double ratio = std::exp(rng.uniform(log_lo, log_hi));
            const int cw = static_cast<int>(std::lround(std::sqrt(target * ratio)));
            const int chh = static_cast<int>(std::lround(std::sqrt(target / ratio)));
            if (cw > 0 && cw <= w && chh > 0 && chh <= h) {
                const int top = static_cast<int>(rng.below(h - chh + 1));
                const int left = static_cast<int>(rng.below(w - cw + 1));
                out = resized_crop(out, top, left, chh, cw);
                done = true;
            }
        }
        if (!done) {
            // Fallback: centre crop clamped to the allowed aspect ratios.
            const double in_ratio = static_cast<double>(w) / h;
            int cw = w, chh = h;
            if (in_ratio < p.crop_ratio_min)
                chh = static_cast<int>(std::lround(w / p.crop_ratio_min));
            else if (in_ratio > p.crop_ratio_max)
                cw = static_cast<int>(std::lround(h * p.crop_ratio_max));
            out = resized_crop(out, (h - chh) / 2, (w - cw) / 2, chh, cw);
        }
    }
    if (p.flip_prob > 0 && rng.bernoulli(p.flip_prob)) out = horizontal_flip(out);
    if (p.jitter_prob > 0 && rng.bernoulli(p.jitter_prob)) color_jitter(out, p, rng);
    if (p.drop_prob > 0 && rng.bernoulli(p.drop_prob)) out = color_drop(out);
    if (p.blur_prob > 0 && rng.bernoulli(p.blur_prob))
        out = gaussian_blur(out, rng.uniform(p.blur_sigma_min, p.blur_sigma_max));
    clamp01(out);
    return out;
}

std::array<Tensor, 4> four_views(const Tensor& image, const AugmentPolicy& policy, Rng& rng) {
    return {augment(image, policy, rng), augment(image, policy, rng), augment(image, policy, rng),
            augment(image, policy, rng)};
}

Tensor normalize_batch(Tensor batch, const std::vector<float>& mean, const std::vector<float>& stdev) {
    const int n = batch.dim(0), c = batch.dim(1);
    const long hw = static_cast<long>(batch.dim(2)) * batch.dim(3);
    if (mean.size() != stdev.size() || (mean.size() != 1 && static_cast<int>(mean.size()) != c))
        throw ConfigError("normalization constants must have 1 or C entries");
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
            const float m = mean.size() == 1 ? mean[0] : mean[ch];
            const float s = stdev.size() == 1 ? stdev[0] : stdev[ch];
            float* p = batch.data() + (static_cast<long>(i) * c + ch) * hw;
            for (long k = 0; k < hw; ++k) p[k] = (p[k] - m) / s;
        }
    return batch;
}

Tensor make_batch(const std::vector<Tensor>& images, const std::vector<float>& mean,
                  const std::vector<float>& stdev) {
    if (images.empty()) throw ContractError("make_batch: no images");
    const Shape& s = images.front().shape();
    std::vector<float> v;
    v.reserve(images.size() * images.front().size());
    for (const auto& im : images) {
        if (im.shape() != s) throw ConfigError("make_batch: images differ in shape");
        v.insert(v.end(), im.storage().begin(), im.storage().end());
    }
    return normalize_batch(Tensor({static_cast<int>(images.size()), s[0], s[1], s[2]}, std::move(v)), mean, stdev);
}

}  // namespace pinas::data
