#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdnas/datapipe.hpp"
#include "cdnas/image.hpp"
#include "cdnas/rng.hpp"
#include "cdnas/tensor.hpp"

namespace cdnas {

// Procedural concrete-defect imagery. Each class has a distinctive texture so
// small networks can separate them; labels are exact by construction.

struct SyntheticSpec {
    uint64_t seed = 1;
    int per_class = 100;        // samples whose primary slot is each class
    int image_size = 32;
    double co_occurrence = 0.3;  // chance of one extra defect on defect images
    double noise = 8.0;          // stddev of base texture noise
};

namespace synth_detail {

inline void put(Image& img, int x, int y, int r, int g, int b) {
    if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
    img.at(x, y, 0) = static_cast<uint8_t>(std::clamp(r, 0, 255));
    img.at(x, y, 1) = static_cast<uint8_t>(std::clamp(g, 0, 255));
    img.at(x, y, 2) = static_cast<uint8_t>(std::clamp(b, 0, 255));
}

inline void blend(Image& img, int x, int y, int r, int g, int b, double a) {
    if (x < 0 || y < 0 || x >= img.w || y >= img.h) return;
    const int tint[3] = {r, g, b};
    for (int c = 0; c < 3; ++c) {
        const double mixed = (1.0 - a) * img.at(x, y, c) + a * tint[c];
        img.at(x, y, c) = static_cast<uint8_t>(std::clamp(std::lround(mixed), 0L, 255L));
    }
}

inline void disc(Image& img, double cx, double cy, double rad, int r, int g, int b, double a) {
    for (int y = static_cast<int>(cy - rad) - 1; y <= static_cast<int>(cy + rad) + 1; ++y)
        for (int x = static_cast<int>(cx - rad) - 1; x <= static_cast<int>(cx + rad) + 1; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad) blend(img, x, y, r, g, b, a);
}

inline Image concrete_base(int size, double noise, Rng& rng) {
    Image img(size, size, 3);
    const int base = 110 + static_cast<int>(rng.uniform_int(50));
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const int v = base + static_cast<int>(std::lround(rng.normal() * noise));
            put(img, x, y, v, v, v);
        }
    return img;
}

// Dark jagged polyline crossing the full image top to bottom.
inline void draw_crack(Image& img, Rng& rng) {
    double x = (0.15 + 0.7 * rng.uniform()) * img.w;
    double dx = (rng.uniform() - 0.5) * 1.2;
    const int shade = 5 + static_cast<int>(rng.uniform_int(20));
    for (double y = 0.0; y < img.h; y += 0.5) {
        const int xi = static_cast<int>(x), yi = static_cast<int>(y);
        put(img, xi, yi, shade, shade, shade);
        put(img, xi + 1, yi, shade, shade, shade);
        if (rng.uniform() < 0.5) put(img, xi - 1, yi, shade, shade, shade);
        dx += (rng.uniform() - 0.5) * 0.6;
        dx = std::clamp(dx, -1.0, 1.0);
        x = std::clamp(x + dx * 0.7, 0.0, img.w - 1.0);
    }
}

// Large irregular dark blob with a wavy boundary.
inline void draw_spallation(Image& img, Rng& rng) {
    const double cx = img.w * (0.3 + 0.4 * rng.uniform());
    const double cy = img.h * (0.3 + 0.4 * rng.uniform());
    const double rad = img.w * (0.26 + 0.10 * rng.uniform());
    const double wob = 0.2 * rng.uniform();
    const double phase = rng.uniform() * 6.28318;
    const int k = 3 + static_cast<int>(rng.uniform_int(3));
    const int shade = 40 + static_cast<int>(rng.uniform_int(20));
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const double ddx = x - cx, ddy = y - cy;
            const double theta = std::atan2(ddy, ddx);
            const double edge = rad * (1.0 + wob * std::sin(k * theta + phase));
            if (ddx * ddx + ddy * ddy <= edge * edge) blend(img, x, y, shade, shade, shade, 0.9);
        }
}

// Bright whitish mottling: many light splats over most of the surface.
inline void draw_efflorescence(Image& img, Rng& rng) {
    const int splats = 18 + static_cast<int>(rng.uniform_int(10));
    for (int i = 0; i < splats; ++i) {
        const double cx = rng.uniform() * img.w, cy = rng.uniform() * img.h;
        const double rad = 1.5 + rng.uniform() * 0.12 * img.w;
        const int v = 240 + static_cast<int>(rng.uniform_int(16));
        disc(img, cx, cy, rad, v, v, v - 8, 0.9);
    }
}

// Straight thick rust-colored bar across the full image.
inline void draw_exposed_bars(Image& img, Rng& rng) {
    const bool vertical = rng.uniform() < 0.5;
    const double pos = (0.25 + 0.5 * rng.uniform()) * (vertical ? img.w : img.h);
    const double slope = (rng.uniform() - 0.5) * 0.3;
    const int half = std::max(1, img.w / 12);
    const int r = 135 + static_cast<int>(rng.uniform_int(30));
    for (int t = 0; t < (vertical ? img.h : img.w); ++t) {
        const int center = static_cast<int>(pos + slope * t);
        for (int o = -half; o <= half; ++o) {
            if (vertical)
                put(img, center + o, t, r, r / 2, r / 4);
            else
                put(img, t, center + o, r, r / 2, r / 4);
        }
    }
}

// Diffuse reddish stain with radial falloff.
inline void draw_corrosion(Image& img, Rng& rng) {
    const double cx = img.w * (0.25 + 0.5 * rng.uniform());
    const double cy = img.h * (0.25 + 0.5 * rng.uniform());
    const double rad = img.w * (0.35 + 0.15 * rng.uniform());
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            const double a = 0.75 * std::exp(-d2 / (rad * rad));
            if (a > 0.02) blend(img, x, y, 160, 60, 30, a);
        }
}

inline void draw_class(Image& img, int cls, Rng& rng) {
    switch (cls) {
        case 1: draw_crack(img, rng); break;
        case 2: draw_spallation(img, rng); break;
        case 3: draw_efflorescence(img, rng); break;
        case 4: draw_exposed_bars(img, rng); break;
        case 5: draw_corrosion(img, rng); break;
        default: break;  // background: base texture only
    }
}

}  // namespace synth_detail

struct SyntheticSample {
    Image img;
    LabelVector labels;
};

// Sample whose primary class is `primary` (0 = background); defect images may
// gain one extra co-occurring defect.
inline SyntheticSample synth_sample(const SyntheticSpec& spec, int primary, Rng& rng) {
    SyntheticSample s;
    s.img = synth_detail::concrete_base(spec.image_size, spec.noise, rng);
    if (primary == 0) {
        s.labels = background_label();
        return s;
    }
    s.labels.set(primary);
    if (rng.uniform() < spec.co_occurrence) {
        int extra = 1 + static_cast<int>(rng.uniform_int(kNumClasses - 1));
        if (extra == primary) extra = 1 + extra % (kNumClasses - 1);
        s.labels.set(extra);
    }
    // Heavier textures first so thin ones stay visible on top.
    for (int cls : {2, 5, 4, 3, 1})
        if (s.labels.get(cls)) synth_detail::draw_class(s.img, cls, rng);
    return s;
}

// In-memory dataset: x [N,3,S,S] in [0,1], y [N,6]; class slots interleaved.
inline std::pair<Tensor, Tensor> synthesize_dataset(const SyntheticSpec& spec) {
    const int n = spec.per_class * kNumClasses;
    const int s = spec.image_size;
    Tensor x({n, 3, s, s});
    Tensor y({n, kNumClasses});
    Rng rng(derive_seed(spec.seed, "synth"));
    for (int i = 0; i < n; ++i) {
        const SyntheticSample sample = synth_sample(spec, i % kNumClasses, rng);
        const Tensor t = image_to_tensor(sample.img);
        std::copy(t.data.begin(), t.data.end(),
                  x.data.begin() + static_cast<int64_t>(i) * 3 * s * s);
        for (int c = 0; c < kNumClasses; ++c) y.at(i, c) = sample.labels.get(c) ? 1.0f : 0.0f;
    }
    return {std::move(x), std::move(y)};
}

// Writes PPM images plus annotation XMLs (one full-image box per sample) so
// the ingest pipeline can consume the set like a real corpus. Images are
// spread over a handful of groups for grouped-split runs.
inline Manifest write_synthetic_dataset(const SyntheticSpec& spec, const std::string& dir) {
    std::filesystem::create_directories(dir);
    Manifest m;
    Rng rng(derive_seed(spec.seed, "synth"));
    const int n = spec.per_class * kNumClasses;
    for (int i = 0; i < n; ++i) {
        const SyntheticSample sample = synth_sample(spec, i % kNumClasses, rng);
        char id[32];
        std::snprintf(id, sizeof(id), "synth_%05d", i);
        ImageInfo info;
        info.id = id;
        info.path = dir + "/" + id + ".ppm";
        info.width = spec.image_size;
        info.height = spec.image_size;
        info.group = "site_" + std::to_string((i / kNumClasses) % 12);
        write_pnm(info.path, sample.img);
        BoxRecord box{info.id, 0, 0, spec.image_size, spec.image_size, sample.labels};
        write_voc_xml(dir + "/" + id + ".xml", info, {box});
        m.images.push_back(info);
        m.boxes.push_back(box);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Patch assembly for training: x [N,3,P,P], y [N,6]. Images load from disk
// once via the cache.

inline std::pair<Tensor, Tensor> assemble_patches(const Manifest& m,
                                                  const std::vector<const BoxRecord*>& recs,
                                                  int patch, bool train_mode, Rng& rng,
                                                  std::map<std::string, Image>* cache = nullptr) {
    const int n = static_cast<int>(recs.size());
    require(n > 0, "patches: empty record list");
    Tensor x({n, 3, patch, patch});
    Tensor y({n, kNumClasses});
    std::map<std::string, Image> local;
    std::map<std::string, Image>& store = cache ? *cache : local;
    for (int i = 0; i < n; ++i) {
        const BoxRecord& b = *recs[static_cast<size_t>(i)];
        const ImageInfo* info = m.find_image(b.image_id);
        require(info != nullptr, "patches: unknown image " + b.image_id);
        auto it = store.find(info->id);
        if (it == store.end()) it = store.emplace(info->id, read_pnm(info->path)).first;
        const Tensor t = extract_patch(it->second, b, patch, train_mode, rng);
        std::copy(t.data.begin(), t.data.end(),
                  x.data.begin() + static_cast<int64_t>(i) * 3 * patch * patch);
        for (int c = 0; c < kNumClasses; ++c) y.at(i, c) = b.labels.get(c) ? 1.0f : 0.0f;
    }
    return {std::move(x), std::move(y)};
}

}  // namespace cdnas
