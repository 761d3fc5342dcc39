#pragma once

// Binary PPM (P6, 8-bit RGB) read/write, plus clip import from a directory of
// frames ordered by zero-padded filename index. Pixels are stored in [0,1]
// in memory and quantized to 8 bits on disk.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spacetime/video_graph.hpp"

namespace spacetime {

inline void write_ppm(const std::string& path, const Image& img) {
    if (img.c != 3) throw std::invalid_argument("write_ppm: expects 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                double v = std::clamp(img.at(y, x, ch), 0.0, 1.0);
                row[static_cast<size_t>(x) * 3 + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error("write_ppm: short write to " + path);
}

inline Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw std::runtime_error("read_ppm: not a binary PPM: " + path);
    auto next_int = [&in, &path]() {
        // skip whitespace and '#' comment lines
        int ch = in.get();
        while (ch != EOF && (std::isspace(ch) || ch == '#')) {
            if (ch == '#')
                while (ch != EOF && ch != '\n') ch = in.get();
            ch = in.get();
        }
        int v = 0;
        bool any = false;
        while (ch != EOF && std::isdigit(ch)) {
            v = v * 10 + (ch - '0');
            any = true;
            ch = in.get();
        }
        if (!any) throw std::runtime_error("read_ppm: malformed header: " + path);
        return v;
    };
    int w = next_int();
    int h = next_int();
    int maxval = next_int();
    if (maxval != 255) throw std::runtime_error("read_ppm: only maxval 255 supported: " + path);
    Image img(h, w, 3);
    std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw std::runtime_error("read_ppm: truncated pixel data: " + path);
    for (size_t i = 0; i < buf.size(); ++i) img.px[i] = buf[i] / 255.0;
    return img;
}

// Loads every *.ppm in `dir`, sorted by filename (frames are written with
// zero-padded indices so lexical order is frame order).
inline Clip load_clip_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<std::string> paths;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm") paths.push_back(e.path().string());
    if (paths.empty()) throw std::runtime_error("load_clip_dir: no frames in " + dir);
    std::sort(paths.begin(), paths.end());
    Clip clip;
    for (const auto& p : paths) clip.frames.push_back(read_ppm(p));
    clip.validate();
    return clip;
}

inline std::string frame_filename(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d.ppm", index);
    return buf;
}

}  // namespace spacetime
