/**
 * @file   synthdata.hpp
 * @brief  Procedural face renderer, on-disk dataset and training-triple
 *         sampling.
 *
 * Each identity is 12 numbers in [0,1] controlling face shape, colours and
 * feature placement. Each image of an identity adds a nuisance draw (shift,
 * rotation, scale, expression, illumination). Renders are supersampled 4x4
 * per pixel and depend only on (identity, nuisance, size).
 *
 * Layout of a dataset directory:
 *
 *     identity_<k>/img_<j>.png   8-bit RGB
 *     manifest.json              splits, seed, sizes
 *     mean.json                  per-channel mean of the training split
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "image_io.hpp"
#include "ops.hpp"
#include "resize.hpp"
#include "rng.hpp"

namespace gwai {

struct IdentityParams {
    static constexpr std::size_t kCount = 12;

    double face_width = 0.5;
    double face_height = 0.5;
    double skin_tone = 0.5;
    double eye_spacing = 0.5;
    double eye_size = 0.5;
    double iris_tone = 0.5;
    double brow_angle = 0.5;
    double nose_length = 0.5;
    double mouth_width = 0.5;
    double mouth_curvature = 0.5;
    double hair_tone = 0.5;
    double hair_coverage = 0.5;

    std::array<double, kCount> values() const {
        return {face_width, face_height, skin_tone,   eye_spacing,     eye_size,  iris_tone,
                brow_angle, nose_length, mouth_width, mouth_curvature, hair_tone, hair_coverage};
    }

    static IdentityParams from_values(const std::array<double, kCount>& v) {
        return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]};
    }

    static IdentityParams draw(Rng& rng) {
        std::array<double, kCount> v{};
        for (auto& x : v) x = rng.uniform();
        return from_values(v);
    }

    void validate() const {
        for (double x : values())
            if (!(x >= 0.0 && x <= 1.0)) throw ValidationError("identity parameters must lie in [0,1]");
    }
};

enum class NuisanceProfile { Full, TranslationOnly, None };

inline NuisanceProfile parse_nuisance_profile(const std::string& s) {
    if (s == "full") return NuisanceProfile::Full;
    if (s == "translation") return NuisanceProfile::TranslationOnly;
    if (s == "none") return NuisanceProfile::None;
    throw ValidationError("unknown nuisance profile '" + s + "' (expected full, translation or none)");
}

inline std::string to_string(NuisanceProfile p) {
    switch (p) {
        case NuisanceProfile::Full: return "full";
        case NuisanceProfile::TranslationOnly: return "translation";
        case NuisanceProfile::None: return "none";
    }
    return "full";
}

struct NuisanceParams {
    static constexpr double kMaxShift = 0.10;
    static constexpr double kMaxRotationDeg = 15.0;
    static constexpr double kMinScale = 0.9, kMaxScale = 1.1;
    static constexpr double kMaxExpression = 0.3;
    static constexpr double kMinGain = 0.8, kMaxGain = 1.2;

    /// Translation as a fraction of the image side.
    double shift_x = 0.0;
    double shift_y = 0.0;
    double rotation_deg = 0.0;
    double scale = 1.0;
    /// Added to the identity's mouth curvature.
    double expression = 0.0;
    double gain = 1.0;

    static NuisanceParams neutral() { return {}; }

    static NuisanceParams draw(Rng& rng, NuisanceProfile profile = NuisanceProfile::Full) {
        NuisanceParams n;
        if (profile == NuisanceProfile::None) return n;
        n.shift_x = rng.uniform(-kMaxShift, kMaxShift);
        n.shift_y = rng.uniform(-kMaxShift, kMaxShift);
        if (profile == NuisanceProfile::TranslationOnly) return n;
        n.rotation_deg = rng.uniform(-kMaxRotationDeg, kMaxRotationDeg);
        n.scale = rng.uniform(kMinScale, kMaxScale);
        n.expression = rng.uniform(-kMaxExpression, kMaxExpression);
        n.gain = rng.uniform(kMinGain, kMaxGain);
        return n;
    }

    void validate() const {
        auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
        if (!in(shift_x, -kMaxShift, kMaxShift) || !in(shift_y, -kMaxShift, kMaxShift) ||
            !in(rotation_deg, -kMaxRotationDeg, kMaxRotationDeg) || !in(scale, kMinScale, kMaxScale) ||
            !in(expression, -kMaxExpression, kMaxExpression) || !in(gain, kMinGain, kMaxGain))
            throw ValidationError("nuisance parameters out of range");
    }
};

// ---------------------------------------------------------------------------
// Renderer.
// ---------------------------------------------------------------------------

namespace detail {

using Rgb = std::array<double, 3>;

inline Rgb lerp(const Rgb& a, const Rgb& b, double t) {
    return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

inline Rgb palette(std::span<const Rgb> stops, double t) {
    const double x = std::clamp(t, 0.0, 1.0) * static_cast<double>(stops.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(x), stops.size() - 2);
    return lerp(stops[i], stops[i + 1], x - static_cast<double>(i));
}

inline Rgb scaled(const Rgb& c, double k) { return {c[0] * k, c[1] * k, c[2] * k}; }

/// Identity-dependent geometry and colours, resolved once per render.
struct FaceLayout {
    double cy, a, b;
    double fringe_y;
    double eye_y, eye_dx, eye_r;
    double brow_dy, brow_half, brow_thick, brow_angle;
    double nose_top, nose_bottom, nose_half;
    double mouth_y, mouth_half, mouth_bend, mouth_thick;
    Rgb background, skin, hair, brow, nose, iris, sclera, pupil, lips;

    FaceLayout(const IdentityParams& id, double expression) {
        static constexpr Rgb kSkin[] = {{0.97, 0.84, 0.72}, {0.82, 0.62, 0.46}, {0.42, 0.27, 0.18}};
        static constexpr Rgb kHair[] = {{0.90, 0.78, 0.45}, {0.70, 0.28, 0.10}, {0.38, 0.24, 0.12}, {0.07, 0.06, 0.06}};
        static constexpr Rgb kIris[] = {{0.20, 0.42, 0.85}, {0.25, 0.62, 0.30}, {0.48, 0.28, 0.10}, {0.55, 0.56, 0.60}};

        cy = 0.06;
        a = 0.40 + 0.18 * id.face_width;
        b = 0.56 + 0.20 * id.face_height;
        fringe_y = cy - b + (0.18 + 0.40 * id.hair_coverage) * b;

        eye_y = cy - 0.14 * b;
        eye_dx = (0.30 + 0.22 * id.eye_spacing) * a;
        eye_r = 0.055 + 0.045 * id.eye_size;

        brow_dy = 1.9 * eye_r + 0.02;
        brow_half = 1.5 * eye_r;
        brow_thick = 0.028;
        brow_angle = (id.brow_angle - 0.5) * 50.0 * std::numbers::pi / 180.0;

        nose_top = eye_y + 0.03;
        nose_bottom = eye_y + 0.20 + 0.16 * id.nose_length;
        nose_half = 0.05 + 0.04 * id.nose_length;

        mouth_y = cy + 0.48 * b;
        mouth_half = (0.26 + 0.30 * id.mouth_width) * a;
        mouth_bend = std::clamp((id.mouth_curvature - 0.5) * 1.2 + expression, -1.0, 1.0) * 0.09;
        mouth_thick = 0.028;

        background = {0.16, 0.19, 0.24};
        skin = palette(kSkin, id.skin_tone);
        hair = palette(kHair, id.hair_tone);
        brow = scaled(hair, 0.7);
        nose = scaled(skin, 0.78);
        iris = palette(kIris, id.iris_tone);
        sclera = {0.96, 0.96, 0.94};
        pupil = {0.04, 0.04, 0.05};
        lips = {0.78, 0.24, 0.28};
    }

    static double sq(double v) { return v * v; }

    /// Colour of the face-space point (x, y); x right, y down, face roughly in [-1,1].
    Rgb shade(double x, double y) const {
        for (int side : {-1, 1}) {
            const double ex = x - side * eye_dx, ey = y - eye_y;
            const double rr = ex * ex + ey * ey;
            if (rr <= sq(0.30 * eye_r)) return pupil;
            if (rr <= sq(0.72 * eye_r)) return iris;
            if (sq(ex / (1.45 * eye_r)) + sq(ey / eye_r) <= 1.0) return sclera;

            // brow: rotated bar above the eye, mirrored per side
            const double bx = x - side * eye_dx, by = y - (eye_y - brow_dy);
            const double ang = side * brow_angle;
            const double u = std::cos(ang) * bx + std::sin(ang) * by;
            const double v = -std::sin(ang) * bx + std::cos(ang) * by;
            if (std::abs(u) <= brow_half && std::abs(v) <= brow_thick) return brow;
        }
        if (std::abs(x) <= mouth_half) {
            const double t = x / mouth_half;
            const double centre = mouth_y + mouth_bend * (1.0 - t * t);
            if (std::abs(y - centre) <= mouth_thick * (1.0 - 0.5 * t * t)) return lips;
        }
        if (y >= nose_top && y <= nose_bottom) {
            const double half = nose_half * (y - nose_top) / (nose_bottom - nose_top);
            if (std::abs(x) <= half) return nose;
        }
        const double face = sq(x / a) + sq((y - cy) / b);
        if (face <= 1.0) return y < fringe_y ? hair : skin;
        if (sq(x / (a + 0.09)) + sq((y - cy + 0.06) / (b + 0.08)) <= 1.0 && y < cy + 0.35 * b) return hair;
        return background;
    }
};

}  // namespace detail

inline constexpr std::size_t kSupersample = 4;

/// Deterministic RGB render in [0,1], shape [3, size, size].
template <class T = float>
Tensor<T> render_face(const IdentityParams& id, const NuisanceParams& nu, std::size_t size) {
    if (size < 32) throw ValidationError("render_face: size must be >= 32");
    id.validate();
    const detail::FaceLayout face(id, nu.expression);
    const double th = nu.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double tx = 2.0 * nu.shift_x, ty = 2.0 * nu.shift_y;
    const double inv_n = 1.0 / static_cast<double>(kSupersample * kSupersample);
    Tensor<T> img({3, size, size});
    auto out = img.mutable_data();
    const std::size_t hw = size * size;
    for (std::size_t i = 0; i < size; ++i)
        for (std::size_t j = 0; j < size; ++j) {
            detail::Rgb acc{0, 0, 0};
            for (std::size_t sy = 0; sy < kSupersample; ++sy)
                for (std::size_t sx = 0; sx < kSupersample; ++sx) {
                    const double py = (static_cast<double>(i) + (static_cast<double>(sy) + 0.5) / kSupersample) /
                                          static_cast<double>(size) * 2.0 - 1.0;
                    const double px = (static_cast<double>(j) + (static_cast<double>(sx) + 0.5) / kSupersample) /
                                          static_cast<double>(size) * 2.0 - 1.0;
                    // image -> face space: undo shift, then rotation and scale
                    const double dx = px - tx, dy = py - ty;
                    const double fx = (c * dx + s * dy) / nu.scale;
                    const double fy = (-s * dx + c * dy) / nu.scale;
                    const auto col = face.shade(fx, fy);
                    for (int k = 0; k < 3; ++k) acc[k] += col[k];
                }
            for (std::size_t k = 0; k < 3; ++k)
                out[k * hw + i * size + j] = static_cast<T>(std::clamp(acc[k] * inv_n * nu.gain, 0.0, 1.0));
        }
    return img;
}

// ---------------------------------------------------------------------------
// Preprocessing.
// ---------------------------------------------------------------------------

using ChannelMean = std::array<double, 3>;

namespace detail {

template <class T, class F>
Tensor<T> per_channel(const Tensor<T>& img, F f) {
    if (img.rank() < 3 || img.dim(img.rank() - 3) != 3)
        throw ShapeError("expected [3,H,W] or [B,3,H,W] image, got " + shape_str(img.shape()));
    const std::size_t hw = img.dim(img.rank() - 1) * img.dim(img.rank() - 2);
    Tensor<T> out(img.shape());
    auto o = out.mutable_data();
    auto in = img.data();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i], (i / hw) % 3);
    return out;
}

}  // namespace detail

/// Network input: value - training-set channel mean.
template <class T>
Tensor<T> preprocess_input(const Tensor<T>& img01, const std::optional<ChannelMean>& mean) {
    if (!mean) throw ValidationError("preprocess_input: dataset mean has not been computed");
    const ChannelMean m = *mean;
    return detail::per_channel(img01, [&](T v, std::size_t c) { return static_cast<T>(v - static_cast<T>(m[c])); });
}

/// Ground truth: [0,1] -> [-1,1].
template <class T>
Tensor<T> preprocess_gt(const Tensor<T>& img01) {
    return detail::per_channel(img01, [](T v, std::size_t) { return T(2) * v - T(1); });
}

/// Generator output -> displayable [0,1].
template <class T>
Tensor<T> deprocess_output(const Tensor<T>& x) {
    Tensor<T> out(x.shape());
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = std::clamp((in[i] + T(1)) / T(2), T(0), T(1));
    return out;
}

/// Stacks equally shaped tensors along a new leading axis.
template <class T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
    if (items.empty()) throw ShapeError("stack: no tensors");
    Shape s{items.size()};
    s.insert(s.end(), items[0].shape().begin(), items[0].shape().end());
    std::vector<T> v;
    v.reserve(numel_of(s));
    for (const auto& t : items) {
        if (t.shape() != items[0].shape()) throw ShapeError("stack: shapes differ");
        v.insert(v.end(), t.data().begin(), t.data().end());
    }
    return Tensor<T>(std::move(s), std::move(v));
}

/// Item b of a batched tensor.
template <class T>
Tensor<T> unstack(const Tensor<T>& batch, std::size_t b) {
    Shape s(batch.shape().begin() + 1, batch.shape().end());
    const std::size_t n = numel_of(s);
    std::vector<T> v(batch.data().begin() + static_cast<std::ptrdiff_t>(b * n),
                     batch.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
    return Tensor<T>(std::move(s), std::move(v));
}

// ---------------------------------------------------------------------------
// On-disk dataset.
// ---------------------------------------------------------------------------

struct DatasetSpec {
    std::size_t n_identities = 16;
    std::size_t images_per_identity = 4;
    std::size_t hr_size = 64;
    std::uint64_t seed = 0;
    double val_frac = 0.1;
    double test_frac = 0.1;
    NuisanceProfile nuisance = NuisanceProfile::Full;

    void validate() const {
        if (images_per_identity < 2)
            throw ValidationError(
                "images_per_identity must be >= 2: every identity needs a ground-truth image and a different "
                "image of the same person to serve as its guide");
        if (n_identities < 1) throw ValidationError("n_identities must be >= 1");
        if (hr_size < 32) throw ValidationError("hr_size must be >= 32");
        if (!(val_frac >= 0 && test_frac >= 0 && val_frac + test_frac < 1))
            throw ValidationError("split fractions must be >= 0 and leave a non-empty training split");
    }
};

inline constexpr int kManifestVersion = 1;
inline const std::array<std::string, 3> kSplitNames = {"train", "val", "test"};

struct Manifest {
    int version = kManifestVersion;
    std::uint64_t seed = 0;
    std::size_t hr_size = 0;
    std::size_t n_identities = 0;
    std::size_t images_per_identity = 0;
    std::string nuisance = "full";
    std::map<std::string, std::vector<std::size_t>> splits;

    const std::vector<std::size_t>& split(const std::string& name) const {
        auto it = splits.find(name);
        if (it == splits.end()) throw ValidationError("unknown split '" + name + "'");
        return it->second;
    }
};

inline void to_json(nlohmann::json& j, const Manifest& m) {
    j = nlohmann::json{{"version", m.version},
                       {"seed", m.seed},
                       {"hr_size", m.hr_size},
                       {"n_identities", m.n_identities},
                       {"images_per_identity", m.images_per_identity},
                       {"nuisance", m.nuisance},
                       {"splits", m.splits}};
}

inline void from_json(const nlohmann::json& j, Manifest& m) {
    j.at("version").get_to(m.version);
    if (m.version != kManifestVersion) throw ValidationError("unsupported manifest version " + std::to_string(m.version));
    j.at("seed").get_to(m.seed);
    j.at("hr_size").get_to(m.hr_size);
    j.at("n_identities").get_to(m.n_identities);
    j.at("images_per_identity").get_to(m.images_per_identity);
    if (j.contains("nuisance")) j.at("nuisance").get_to(m.nuisance);
    j.at("splits").get_to(m.splits);
}

inline std::filesystem::path image_path(const std::filesystem::path& root, std::size_t identity, std::size_t index) {
    return root / ("identity_" + std::to_string(identity)) / ("img_" + std::to_string(index) + ".png");
}

/// Identity parameters of identity k under a dataset seed.
inline IdentityParams identity_for(std::uint64_t seed, std::size_t k) {
    Rng rng(derive_seed(seed, 0x1D, k));
    return IdentityParams::draw(rng);
}

inline NuisanceParams nuisance_for(std::uint64_t seed, std::size_t k, std::size_t j, NuisanceProfile p) {
    Rng rng(derive_seed(seed, 0x2A, k, j));
    return NuisanceParams::draw(rng, p);
}

/// Identity ids per split; disjoint, each sorted.
inline std::map<std::string, std::vector<std::size_t>> assign_splits(const DatasetSpec& spec) {
    std::vector<std::size_t> ids(spec.n_identities);
    for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = k;
    Rng rng(derive_seed(spec.seed, 0x5B));
    rng.shuffle(ids);
    const auto n = static_cast<double>(spec.n_identities);
    const auto n_test = static_cast<std::size_t>(std::floor(n * spec.test_frac));
    const auto n_val = static_cast<std::size_t>(std::floor(n * spec.val_frac));
    std::map<std::string, std::vector<std::size_t>> s;
    s["test"].assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    s["val"].assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test),
                    ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
    s["train"].assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), ids.end());
    for (auto& [name, v] : s) std::sort(v.begin(), v.end());
    return s;
}

inline std::string format_mean_json(const ChannelMean& m) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "{\"r\": %.6f, \"g\": %.6f, \"b\": %.6f}\n", m[0], m[1], m[2]);
    return buf;
}

inline ChannelMean read_mean_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    const auto j = nlohmann::json::parse(in);
    return {j.at("r").get<double>(), j.at("g").get<double>(), j.at("b").get<double>()};
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << s;
    if (!out) throw IoError("write failed: " + p.string());
}

/// Renders and writes the dataset; returns its manifest.
inline Manifest build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    std::filesystem::create_directories(out_dir);
    Manifest m;
    m.seed = spec.seed;
    m.hr_size = spec.hr_size;
    m.n_identities = spec.n_identities;
    m.images_per_identity = spec.images_per_identity;
    m.nuisance = to_string(spec.nuisance);
    m.splits = assign_splits(spec);

    std::vector<bool> in_train(spec.n_identities, false);
    for (auto k : m.splits["train"]) in_train[k] = true;
    std::array<double, 3> sum{0, 0, 0};
    std::size_t count = 0;
    for (std::size_t k = 0; k < spec.n_identities; ++k) {
        std::filesystem::create_directories(out_dir / ("identity_" + std::to_string(k)));
        const auto id = identity_for(spec.seed, k);
        for (std::size_t j = 0; j < spec.images_per_identity; ++j) {
            const auto img = to_image8(render_face<double>(id, nuisance_for(spec.seed, k, j, spec.nuisance), spec.hr_size));
            write_png(image_path(out_dir, k, j), img);
            if (!in_train[k]) continue;
            for (std::size_t p = 0; p < img.width * img.height; ++p)
                for (std::size_t c = 0; c < 3; ++c) sum[c] += img.rgb[p * 3 + c] / 255.0;
            count += img.width * img.height;
        }
    }
    ChannelMean mean{sum[0] / static_cast<double>(count), sum[1] / static_cast<double>(count),
                     sum[2] / static_cast<double>(count)};
    write_text(out_dir / "manifest.json", nlohmann::json(m).dump(2) + "\n");
    write_text(out_dir / "mean.json", format_mean_json(mean));
    return m;
}

// ---------------------------------------------------------------------------
// Loaded dataset and sampling.
// ---------------------------------------------------------------------------

enum class GuideMode { Normal, Shuffled, None };

inline GuideMode parse_guide_mode(const std::string& s) {
    if (s == "normal") return GuideMode::Normal;
    if (s == "shuffled") return GuideMode::Shuffled;
    if (s == "none") return GuideMode::None;
    throw ValidationError("unknown guide mode '" + s + "' (expected normal, shuffled or none)");
}

/// Images held in memory as [3,H,W] tensors in [0,1].
template <class T>
class Dataset {
public:
    static Dataset load(const std::filesystem::path& dir) {
        Dataset d;
        d.root_ = dir;
        std::ifstream in(dir / "manifest.json");
        if (!in) throw IoError("no manifest.json in " + dir.string());
        d.manifest_ = nlohmann::json::parse(in).get<Manifest>();
        if (std::filesystem::exists(dir / "mean.json")) d.mean_ = read_mean_json(dir / "mean.json");
        d.images_.resize(d.manifest_.n_identities);
        d.split_of_.assign(d.manifest_.n_identities, "");
        for (const auto& [name, ids] : d.manifest_.splits)
            for (auto k : ids) {
                if (k >= d.manifest_.n_identities) throw ValidationError("manifest lists unknown identity");
                d.split_of_[k] = name;
            }
        for (std::size_t k = 0; k < d.manifest_.n_identities; ++k)
            for (std::size_t j = 0; j < d.manifest_.images_per_identity; ++j) {
                auto img = read_png<T>(image_path(dir, k, j));
                if (img.dim(1) != d.manifest_.hr_size || img.dim(2) != d.manifest_.hr_size)
                    throw ValidationError("image size does not match manifest: " + image_path(dir, k, j).string());
                d.images_[k].push_back(std::move(img));
            }
        return d;
    }

    /// In-memory dataset (tests); no files involved.
    static Dataset from_images(std::vector<std::vector<Tensor<T>>> images, std::optional<ChannelMean> mean,
                               std::map<std::string, std::vector<std::size_t>> splits = {}) {
        Dataset d;
        d.images_ = std::move(images);
        d.mean_ = mean;
        d.manifest_.n_identities = d.images_.size();
        d.manifest_.images_per_identity = d.images_.empty() ? 0 : d.images_[0].size();
        d.manifest_.hr_size = d.images_.empty() ? 0 : d.images_[0][0].dim(1);
        if (splits.empty())
            for (std::size_t k = 0; k < d.images_.size(); ++k) splits["train"].push_back(k);
        for (const auto& n : kSplitNames) splits[n];
        d.manifest_.splits = std::move(splits);
        d.split_of_.assign(d.images_.size(), "");
        for (const auto& [name, ids] : d.manifest_.splits)
            for (auto k : ids) d.split_of_.at(k) = name;
        return d;
    }

    const Manifest& manifest() const { return manifest_; }
    const std::optional<ChannelMean>& mean() const { return mean_; }
    std::size_t hr_size() const { return manifest_.hr_size; }
    std::size_t n_identities() const { return images_.size(); }
    const std::vector<std::size_t>& identities(const std::string& split) const { return manifest_.split(split); }
    const std::string& split_of(std::size_t identity) const { return split_of_.at(identity); }
    const std::vector<Tensor<T>>& images(std::size_t identity) const { return images_.at(identity); }
    const Tensor<T>& image(std::size_t identity, std::size_t j) const { return images_.at(identity).at(j); }

private:
    std::filesystem::path root_;
    Manifest manifest_;
    std::optional<ChannelMean> mean_;
    std::vector<std::vector<Tensor<T>>> images_;
    std::vector<std::string> split_of_;
};

/// One supervised example. `guide` is undefined in GuideMode::None.
template <class T>
struct TrainingTriple {
    Tensor<T> lr;     // [3, hr/sr, hr/sr], preprocessed input
    Tensor<T> guide;  // [3, hr, hr], preprocessed input
    Tensor<T> gt;     // [3, hr, hr], in [-1, 1]
    std::size_t identity = 0;
    std::size_t gt_index = 0;
    std::size_t guide_identity = 0;
    std::size_t guide_index = 0;
};

/// LR network input derived from a raw [0,1] HR image.
template <class T>
Tensor<T> make_lr_input(const Tensor<T>& hr01, std::size_t sr_factor, const std::optional<ChannelMean>& mean) {
    const std::size_t side = hr01.dim(hr01.rank() - 1) / sr_factor;
    return preprocess_input(bicubic_resize(hr01, side, side), mean);
}

/// Builds a triple from explicit image choices.
template <class T>
TrainingTriple<T> make_triple(const Dataset<T>& ds, std::size_t identity, std::size_t gt_index,
                              std::optional<std::pair<std::size_t, std::size_t>> guide, std::size_t sr_factor) {
    TrainingTriple<T> t;
    const auto& gt01 = ds.image(identity, gt_index);
    t.identity = identity;
    t.gt_index = gt_index;
    t.gt = preprocess_gt(gt01);
    t.lr = make_lr_input(gt01, sr_factor, ds.mean());
    if (guide) {
        t.guide_identity = guide->first;
        t.guide_index = guide->second;
        t.guide = preprocess_input(ds.image(guide->first, guide->second), ds.mean());
    }
    return t;
}

/// GT uniform over the identity's images; guide uniform over the remaining
/// images (Normal), over the images of a uniformly drawn other identity of
/// the same split (Shuffled), or absent (None).
template <class T>
TrainingTriple<T> sample_triple(const Dataset<T>& ds, std::size_t identity, Rng& rng, GuideMode mode,
                                std::size_t sr_factor = 8) {
    const std::size_t m = ds.images(identity).size();
    if (m == 0) throw ValidationError("identity has no images");
    if (mode == GuideMode::Normal && m < 2)
        throw ValidationError("normal guide mode needs >= 2 images of the identity");
    const auto gt_index = static_cast<std::size_t>(rng.below(m));
    std::optional<std::pair<std::size_t, std::size_t>> guide;
    if (mode == GuideMode::Normal) {
        auto g = static_cast<std::size_t>(rng.below(m - 1));
        if (g >= gt_index) ++g;
        guide = {identity, g};
    } else if (mode == GuideMode::Shuffled) {
        const auto& pool = ds.identities(ds.split_of(identity));
        std::vector<std::size_t> others;
        for (auto k : pool)
            if (k != identity) others.push_back(k);
        if (others.empty()) throw ValidationError("shuffled guide mode needs >= 2 identities in the split");
        const auto other = others[rng.below(others.size())];
        guide = {other, static_cast<std::size_t>(rng.below(ds.images(other).size()))};
    }
    return make_triple(ds, identity, gt_index, guide, sr_factor);
}

/// Batched triple; guide undefined when the triples carry none.
template <class T>
struct TripleBatch {
    Tensor<T> lr, guide, gt;
    std::vector<std::size_t> identities;
};

template <class T>
TripleBatch<T> collate(const std::vector<TrainingTriple<T>>& ts) {
    std::vector<Tensor<T>> lr, gi, gt;
    TripleBatch<T> b;
    for (const auto& t : ts) {
        lr.push_back(t.lr);
        gt.push_back(t.gt);
        if (t.guide.defined()) gi.push_back(t.guide);
        b.identities.push_back(t.identity);
    }
    b.lr = stack<T>(lr);
    b.gt = stack<T>(gt);
    if (!gi.empty()) {
        if (gi.size() != ts.size()) throw ValidationError("collate: mixed guided and guide-free triples");
        b.guide = stack<T>(gi);
    }
    return b;
}

/// Pair for the Siamese encoder: label 1 for two distinct images of one
/// identity, 0 for images of two different identities; balanced.
template <class T>
struct IdentityPair {
    Tensor<T> a, b;
    T label;
    std::size_t identity_a = 0, identity_b = 0;
};

template <class T>
IdentityPair<T> sample_pair(const Dataset<T>& ds, std::span<const std::size_t> pool, Rng& rng) {
    if (pool.size() < 2) throw ValidationError("identity pairs need >= 2 identities");
    const bool same = rng.below(2) == 1;
    const auto k1 = pool[rng.below(pool.size())];
    const std::size_t m1 = ds.images(k1).size();
    const auto i1 = static_cast<std::size_t>(rng.below(m1));
    std::size_t k2 = k1, i2 = 0;
    if (same) {
        i2 = static_cast<std::size_t>(rng.below(m1 - 1));
        if (i2 >= i1) ++i2;
    } else {
        auto r = static_cast<std::size_t>(rng.below(pool.size() - 1));
        k2 = pool[r >= static_cast<std::size_t>(std::find(pool.begin(), pool.end(), k1) - pool.begin()) ? r + 1 : r];
        i2 = static_cast<std::size_t>(rng.below(ds.images(k2).size()));
    }
    return {preprocess_input(ds.image(k1, i1), ds.mean()), preprocess_input(ds.image(k2, i2), ds.mean()),
            same ? T(1) : T(0), k1, k2};
}

/// Two distinct images from each of `n_ids` distinct identities, ordered
/// identity by identity: rows 2i and 2i+1 share identities[i].
template <class T>
struct IdentityBatch {
    std::vector<Tensor<T>> images;
    std::vector<std::size_t> identities;
};

template <class T>
IdentityBatch<T> sample_identity_batch(const Dataset<T>& ds, std::span<const std::size_t> pool, std::size_t n_ids,
                                       Rng& rng) {
    if (n_ids < 2) throw ValidationError("identity batches need >= 2 identities");
    if (pool.size() < n_ids)
        throw ValidationError("identity batch of " + std::to_string(n_ids) + " needs that many identities, split has " +
                              std::to_string(pool.size()));
    std::vector<std::size_t> ids(pool.begin(), pool.end());
    IdentityBatch<T> out;
    for (std::size_t i = 0; i < n_ids; ++i) {
        std::swap(ids[i], ids[i + static_cast<std::size_t>(rng.below(ids.size() - i))]);
        const auto k = ids[i];
        const std::size_t m = ds.images(k).size();
        const auto i1 = static_cast<std::size_t>(rng.below(m));
        auto i2 = static_cast<std::size_t>(rng.below(m - 1));
        if (i2 >= i1) ++i2;
        out.images.push_back(preprocess_input(ds.image(k, i1), ds.mean()));
        out.images.push_back(preprocess_input(ds.image(k, i2), ds.mean()));
        out.identities.push_back(k);
    }
    return out;
}

}  // namespace gwai
