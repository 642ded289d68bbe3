#include "coronagan/inference.hpp"

#include <algorithm>
#include <cctype>

namespace coronagan::infer {

Direction parse_direction(const std::string& s) {
  std::string k = s;
  std::ranges::transform(k, k.begin(), [](unsigned char c) { return std::tolower(c); });
  if (k == "o2h" || k == "oct2hist") return Direction::kOctToHist;
  if (k == "h2o" || k == "hist2oct") return Direction::kHistToOct;
  throw ValidationError("unknown direction '" + s + "' (expected O2H or H2O)");
}

std::string to_string(Direction d) { return d == Direction::kOctToHist ? "O2H" : "H2O"; }

ImageTensor pad_to_multiple(const ImageTensor& image, int multiple) {
  if (multiple < 1) throw ValidationError("pad multiple must be >= 1");
  const int h = (image.h() + multiple - 1) / multiple * multiple;
  const int w = (image.w() + multiple - 1) / multiple * multiple;
  if (h - image.h() >= image.h() || w - image.w() >= image.w()) {
    throw ShapeError("image " + image.shape().str() + " is too small to reflect-pad to a multiple of " +
                     std::to_string(multiple));
  }
  ImageTensor out(image.n(), image.c(), h, w);
  const auto reflect = [](int i, int n) { return i < n ? i : 2 * (n - 1) - i; };
  for (int n = 0; n < image.n(); ++n) {
    for (int c = 0; c < image.c(); ++c) {
      for (int r = 0; r < h; ++r) {
        for (int q = 0; q < w; ++q) {
          out(n, c, r, q) = image(n, c, reflect(r, image.h()), reflect(q, image.w()));
        }
      }
    }
  }
  return out;
}

ImageTensor translate(const net::CoronaryGan<float>& model, const ImageTensor& image,
                      Direction direction, bool pad) {
  const auto& gen = direction == Direction::kOctToHist ? model.g_oh : model.g_ho;
  const int want = gen.config().in_channels;
  if (image.c() != want) {
    throw ShapeError("direction " + to_string(direction) + " expects " + std::to_string(want) +
                     "-channel input, got " + image.shape().str());
  }
  const int m = gen.config().scale();
  if (image.h() % m == 0 && image.w() % m == 0) return gen.forward(image).image;
  if (!pad) {
    throw ShapeError("input " + std::to_string(image.h()) + "x" + std::to_string(image.w()) +
                     " is not divisible by " + std::to_string(m) +
                     "; rerun with --pad-to-multiple");
  }
  const ImageTensor out = gen.forward(pad_to_multiple(image, m)).image;
  return crop(out, 0, 0, image.h(), image.w());
}

std::vector<InferResult> run(const net::CoronaryGan<float>& model,
                             const std::vector<std::filesystem::path>& inputs,
                             const std::filesystem::path& out_dir, const InferOptions& options) {
  std::vector<std::filesystem::path> files;
  for (const auto& in : inputs) {
    if (std::filesystem::is_directory(in)) {
      std::vector<std::filesystem::path> found;
      for (const auto& e : std::filesystem::directory_iterator(in)) {
        if (e.is_regular_file() && e.path().extension() == ".png" &&
            !e.path().stem().string().ends_with("_mask")) {
          found.push_back(e.path());
        }
      }
      std::ranges::sort(found);
      files.insert(files.end(), found.begin(), found.end());
    } else if (std::filesystem::exists(in)) {
      files.push_back(in);
    } else {
      throw IoError("input not found: " + in.string());
    }
  }
  if (files.empty()) throw IoError("no input images found");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<InferResult> results;
  for (const auto& file : files) {
    const ImageTensor image = read_png(file);
    const ImageTensor out = translate(model, image, options.direction, options.pad_to_multiple);
    InferResult r;
    r.input = file;
    r.output = out_dir / (file.stem().string() + "_translated.png");
    write_png(r.output, out);
    if (options.montage) {
      r.montage = out_dir / (file.stem().string() + "_montage.png");
      write_png(r.montage, montage({image, out}));
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace coronagan::infer
