#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include "mcld/tensor.hpp"

namespace mcld {

// Binary PPM (P6, 8-bit). Values clamped to [0,1] and quantized to 255 levels.
inline void write_ppm(const std::string& path, const Tensor<float>& img) {
    check(img.ndim() == 3 && img.dim(2) == 3, "write_ppm: expected H×W×3");
    std::ofstream f(path, std::ios::binary);
    check(static_cast<bool>(f), "write_ppm: cannot open for write: " + path);
    f << "P6\n" << img.dim(1) << " " << img.dim(0) << "\n255\n";
    std::string buf;
    buf.reserve(static_cast<size_t>(img.numel()));
    for (int64_t i = 0; i < img.numel(); ++i) {
        float v = std::min(1.0f, std::max(0.0f, img.data[i]));
        buf.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    check(static_cast<bool>(f), "write_ppm: write failed: " + path);
}

inline Tensor<float> read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(static_cast<bool>(f), "read_ppm: cannot open: " + path);
    std::string magic;
    f >> magic;
    check(magic == "P6", "read_ppm: not a P6 file: " + path);
    auto skip_ws_comments = [&]() {
        while (true) {
            int c = f.peek();
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
    };
    int64_t w = 0, h = 0, maxval = 0;
    skip_ws_comments();
    f >> w;
    skip_ws_comments();
    f >> h;
    skip_ws_comments();
    f >> maxval;
    check(w > 0 && h > 0, "read_ppm: bad dimensions: " + path);
    check(maxval == 255, "read_ppm: only maxval 255 supported: " + path);
    f.get();  // single whitespace after header
    Tensor<float> img({h, w, 3});
    std::string buf(static_cast<size_t>(img.numel()), '\0');
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    check(f.gcount() == static_cast<std::streamsize>(buf.size()),
          "read_ppm: truncated pixel data: " + path);
    for (int64_t i = 0; i < img.numel(); ++i)
        img.data[i] = static_cast<float>(static_cast<unsigned char>(buf[static_cast<size_t>(i)])) /
                      255.0f;
    return img;
}

}  // namespace mcld
