#include "cenet/image_io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>

namespace cenet {

Image load_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image " + path.string());
  const Index H = bgr.rows, W = bgr.cols;
  Image img({3, H, W});
  for (Index y = 0; y < H; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c) img.data[(c * H + y) * W + x] = static_cast<float>(row[x][2 - c]) / 255.0f;
  }
  return img;
}

namespace {
unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}
}  // namespace

void save_image(const std::filesystem::path& path, const Image& img) {
  require(img.rank() == 3 && (img.dim(0) == 1 || img.dim(0) == 3), "save_image: expected [1|3,H,W]");
  const Index C = img.dim(0), H = img.dim(1), W = img.dim(2);
  cv::Mat out(static_cast<int>(H), static_cast<int>(W), C == 3 ? CV_8UC3 : CV_8UC1);
  for (Index y = 0; y < H; ++y) {
    auto* row = out.ptr<unsigned char>(static_cast<int>(y));
    for (Index x = 0; x < W; ++x) {
      if (C == 1) {
        row[x] = to_byte(img.data[y * W + x]);
      } else {
        for (Index c = 0; c < 3; ++c) row[x * 3 + (2 - c)] = to_byte(img.data[(c * H + y) * W + x]);
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), out);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write image " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write image " + path.string());
}

Image quantize8(const Image& img) {
  Image out(img.shape);
  for (Index i = 0; i < img.size(); ++i) out.data[i] = static_cast<float>(to_byte(img.data[i])) / 255.0f;
  return out;
}

}  // namespace cenet
