#include "insectup/service/codec.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cstring>
#include <vector>

#include "insectup/error.hpp"

namespace insectup::service {

Image decode_image(std::string_view bytes) {
  if (bytes.empty()) throw Error(ErrorCode::UndecodableImage, "empty upload");
  cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<char*>(bytes.data()));
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::UndecodableImage, std::string("cannot decode image: ") + e.what());
  }
  if (bgr.empty() || bgr.depth() != CV_8U) {
    throw Error(ErrorCode::UndecodableImage, "cannot decode image");
  }
  Image img(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(x, y, 0) = row[3 * x + 2];
      img.at(x, y, 1) = row[3 * x + 1];
      img.at(x, y, 2) = row[3 * x];
    }
  }
  return img;
}

std::string encode_png(const Image& img) {
  if (img.width < 1 || img.height < 1) throw Error(ErrorCode::EmptyImage, "empty image");
  cv::Mat bgr(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width; ++x) {
      row[3 * x] = img.at(x, y, 2);
      row[3 * x + 1] = img.at(x, y, 1);
      row[3 * x + 2] = img.at(x, y, 0);
    }
  }
  std::vector<std::uint8_t> buf;
  cv::imencode(".png", bgr, buf);
  return std::string(buf.begin(), buf.end());
}

}  // namespace insectup::service
