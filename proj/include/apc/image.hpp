#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace apc {

// RGB image with channel values in [0,1], stored as one matrix per channel.
struct ImageTensor {
  Eigen::MatrixXd r, g, b;  // each (h, w)

  int height() const { return static_cast<int>(r.rows()); }
  int width() const { return static_cast<int>(r.cols()); }

  static ImageTensor zeros(int h, int w) {
    return {Eigen::MatrixXd::Zero(h, w), Eigen::MatrixXd::Zero(h, w),
            Eigen::MatrixXd::Zero(h, w)};
  }
};

// Pixel-level class mask; 0 is background, 255 the ignore id.
struct SegMask {
  Eigen::MatrixXi classes;  // (h, w)

  int height() const { return static_cast<int>(classes.rows()); }
  int width() const { return static_cast<int>(classes.cols()); }
};

inline constexpr int kIgnoreId = 255;

// Bilinear resize, per channel.
inline Eigen::MatrixXd resize_bilinear(const Eigen::MatrixXd& src, int oh, int ow) {
  int ih = static_cast<int>(src.rows()), iw = static_cast<int>(src.cols());
  Eigen::MatrixXd out(oh, ow);
  for (int y = 0; y < oh; ++y) {
    double sy = (oh == 1) ? 0.0 : (y + 0.5) * ih / oh - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(ih - 1));
    int y0 = static_cast<int>(sy);
    int y1 = std::min(y0 + 1, ih - 1);
    double fy = sy - y0;
    for (int x = 0; x < ow; ++x) {
      double sx = (ow == 1) ? 0.0 : (x + 0.5) * iw / ow - 0.5;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(iw - 1));
      int x0 = static_cast<int>(sx);
      int x1 = std::min(x0 + 1, iw - 1);
      double fx = sx - x0;
      out(y, x) = src(y0, x0) * (1 - fy) * (1 - fx) + src(y0, x1) * (1 - fy) * fx +
                  src(y1, x0) * fy * (1 - fx) + src(y1, x1) * fy * fx;
    }
  }
  return out;
}

inline ImageTensor resize_bilinear(const ImageTensor& img, int oh, int ow) {
  return {resize_bilinear(img.r, oh, ow), resize_bilinear(img.g, oh, ow),
          resize_bilinear(img.b, oh, ow)};
}

// ---- PPM (P6) / PGM (P5) binary I/O ----

inline void write_ppm(const std::string& path, const ImageTensor& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  int h = img.height(), w = img.width();
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> buf(static_cast<size_t>(h) * w * 3);
  size_t at = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto q = [](double v) {
        return static_cast<uint8_t>(std::min(std::max(v, 0.0), 1.0) * 255.0 + 0.5);
      };
      buf[at++] = q(img.r(y, x));
      buf[at++] = q(img.g(y, x));
      buf[at++] = q(img.b(y, x));
    }
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

namespace detail {
inline void read_pnm_header(std::istream& f, const std::string& magic, int& w, int& h) {
  std::string m;
  f >> m;
  if (m != magic) throw std::runtime_error("bad magic, expected " + magic);
  auto skip = [&f] {
    for (;;) {
      int c = f.peek();
      if (c == '#') { std::string line; std::getline(f, line); }
      else if (std::isspace(c)) f.get();
      else break;
    }
  };
  skip(); f >> w; skip(); f >> h;
  int maxval; skip(); f >> maxval;
  if (maxval != 255) throw std::runtime_error("only maxval 255 supported");
  f.get();  // single whitespace before raster
}
}  // namespace detail

inline ImageTensor read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  int w = 0, h = 0;
  detail::read_pnm_header(f, "P6", w, h);
  std::vector<uint8_t> buf(static_cast<size_t>(h) * w * 3);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("truncated ppm: " + path);
  ImageTensor img = ImageTensor::zeros(h, w);
  size_t at = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.r(y, x) = buf[at++] / 255.0;
      img.g(y, x) = buf[at++] / 255.0;
      img.b(y, x) = buf[at++] / 255.0;
    }
  return img;
}

inline void write_pgm(const std::string& path, const Eigen::MatrixXi& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  int h = static_cast<int>(m.rows()), w = static_cast<int>(m.cols());
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> buf(static_cast<size_t>(h) * w);
  size_t at = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      buf[at++] = static_cast<uint8_t>(std::min(std::max(m(y, x), 0), 255));
  f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

inline Eigen::MatrixXi read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  int w = 0, h = 0;
  detail::read_pnm_header(f, "P5", w, h);
  std::vector<uint8_t> buf(static_cast<size_t>(h) * w);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("truncated pgm: " + path);
  Eigen::MatrixXi m(h, w);
  size_t at = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m(y, x) = buf[at++];
  return m;
}

}  // namespace apc
