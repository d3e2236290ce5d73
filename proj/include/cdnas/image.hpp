#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cdnas/tensor.hpp"

namespace cdnas {

// Interleaved 8-bit image, 1 (gray) or 3 (rgb) channels, row-major.
struct Image {
    int w = 0, h = 0, c = 0;
    std::vector<uint8_t> data;

    Image() = default;
    Image(int width, int height, int channels, uint8_t fill = 0)
        : w(width), h(height), c(channels),
          data(static_cast<size_t>(width) * height * channels, fill) {}

    uint8_t& at(int x, int y, int ch) {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    uint8_t at(int x, int y, int ch) const {
        return data[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    bool empty() const { return data.empty(); }
};

namespace pnm_detail {

inline int next_token(std::istream& in) {
    // Skips whitespace and '#' comments, then reads one non-negative int.
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (std::isspace(ch)) {
            ch = in.get();
        } else {
            break;
        }
    }
    require(ch != EOF && std::isdigit(ch), "pnm: truncated header");
    int value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        ch = in.get();
    }
    return value;
}

}  // namespace pnm_detail

// Binary PGM (P5) and PPM (P6), maxval 255.
inline Image read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "pnm: cannot open " + path);
    char magic[2] = {};
    in.read(magic, 2);
    require(magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6'),
            "pnm: unsupported format in " + path);
    const int channels = magic[1] == '6' ? 3 : 1;
    const int w = pnm_detail::next_token(in);
    const int h = pnm_detail::next_token(in);
    const int maxval = pnm_detail::next_token(in);
    require(w > 0 && h > 0, "pnm: bad dimensions in " + path);
    require(maxval == 255, "pnm: only maxval 255 supported (" + path + ")");
    Image img(w, h, channels);
    in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    require(in.gcount() == static_cast<std::streamsize>(img.data.size()),
            "pnm: truncated pixel data in " + path);
    return img;
}

inline void write_pnm(const std::string& path, const Image& img) {
    require(img.c == 1 || img.c == 3, "pnm: need 1 or 3 channels");
    require(img.w > 0 && img.h > 0, "pnm: empty image");
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "pnm: cannot write " + path);
    out << (img.c == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.data.size()));
    require(out.good(), "pnm: write failed for " + path);
}

inline Image crop_image(const Image& img, int x0, int y0, int cw, int ch) {
    require(cw > 0 && ch > 0 && x0 >= 0 && y0 >= 0 && x0 + cw <= img.w && y0 + ch <= img.h,
            "crop: region outside image");
    Image out(cw, ch, img.c);
    for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
            for (int k = 0; k < img.c; ++k) out.at(x, y, k) = img.at(x0 + x, y0 + y, k);
    return out;
}

// Bilinear resampling with center-aligned coordinates.
inline Image resize_bilinear(const Image& img, int nw, int nh) {
    require(nw > 0 && nh > 0 && !img.empty(), "resize: bad target size");
    Image out(nw, nh, img.c);
    const double sx = static_cast<double>(img.w) / nw;
    const double sy = static_cast<double>(img.h) / nh;
    for (int y = 0; y < nh; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < nw; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.w - 1);
            const double wx = fx - x0;
            for (int k = 0; k < img.c; ++k) {
                const double top = (1.0 - wx) * img.at(x0, y0, k) + wx * img.at(x1, y0, k);
                const double bot = (1.0 - wx) * img.at(x0, y1, k) + wx * img.at(x1, y1, k);
                out.at(x, y, k) = static_cast<uint8_t>(std::lround((1.0 - wy) * top + wy * bot));
            }
        }
    }
    return out;
}

// [0,1]-scaled CHW tensor; gray images are replicated to three channels.
inline Tensor image_to_tensor(const Image& img) {
    require(!img.empty(), "image_to_tensor: empty image");
    Tensor t({3, img.h, img.w});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int k = 0; k < 3; ++k)
                t.data[static_cast<size_t>((k * img.h + y) * img.w + x)] =
                    img.at(x, y, img.c == 3 ? k : 0) / 255.0f;
    return t;
}

}  // namespace cdnas
