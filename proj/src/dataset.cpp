#include "bunet/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>

#include "bunet/mask.hpp"
#include "bunet/pgm.hpp"
#include "bunet/rng.hpp"
#include "bunet/spatial.hpp"

namespace fs = std::filesystem;

namespace bunet {

Tensor<float> resize_nearest(const Tensor<float>& map, int out_h, int out_w) {
  const int H = map.shape().h(), W = map.shape().w();
  if (H == out_h && W == out_w) return map.clone();
  Tensor<float> out(Shape::nchw(1, 1, out_h, out_w));
  for (int y = 0; y < out_h; ++y) {
    int sy = static_cast<int>((y + 0.5) * H / out_h);
    if (sy > H - 1) sy = H - 1;
    for (int x = 0; x < out_w; ++x) {
      int sx = static_cast<int>((x + 0.5) * W / out_w);
      if (sx > W - 1) sx = W - 1;
      out.data()[static_cast<std::int64_t>(y) * out_w + x] =
          map.data()[static_cast<std::int64_t>(sy) * W + sx];
    }
  }
  return out;
}

Tensor<float> resize_bilinear(const Tensor<float>& img, int out_h, int out_w) {
  if (img.shape().h() == out_h && img.shape().w() == out_w) return img.clone();
  NoGradGuard ng;
  return upsample_bilinear(img, out_h, out_w);
}

void save_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  for (const Sample& s : samples) {
    write_pgm((fs::path(dir) / "images" / (s.id + ".pgm")).string(), s.image);
    write_pgm((fs::path(dir) / "masks" / (s.id + ".pgm")).string(), s.mask);
  }
}

std::vector<Sample> load_dataset(const std::string& dir, int target_size) {
  const fs::path images = fs::path(dir) / "images";
  const fs::path masks = fs::path(dir) / "masks";
  if (!fs::is_directory(images))
    fail("load_dataset: missing images/ directory under '" + dir + "'");

  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) fail("load_dataset: no .pgm images under '" + images.string() + "'");

  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    const fs::path mask_path = masks / (id + ".pgm");
    if (!fs::exists(mask_path))
      fail("load_dataset: sample '" + id + "' has no mask at '" + mask_path.string() + "'");
    Sample s;
    s.id = id;
    s.image = resize_bilinear(read_pgm((images / (id + ".pgm")).string()), target_size,
                              target_size);
    Tensor<float> mask = resize_nearest(read_pgm(mask_path.string()), target_size, target_size);
    for (std::int64_t i = 0; i < mask.numel(); ++i)
      mask.data()[i] = mask.data()[i] > 0.5f ? 1.0f : 0.0f;
    s.mask = mask;
    s.boundary = extract_boundary(mask);
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_dataset(std::vector<Sample> samples,
                                                                  double ratio,
                                                                  std::uint64_t seed) {
  if (ratio < 0 || ratio > 1) fail("split_dataset: ratio must be in [0,1]");
  SplitMix64 rng(stream_seed(seed, "dataset-split"));
  for (std::size_t i = samples.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(samples[i - 1], samples[j]);
  }
  const std::size_t n_train = static_cast<std::size_t>(
      std::min<long long>(static_cast<long long>(samples.size()),
                          std::llround(ratio * static_cast<double>(samples.size()))));
  std::vector<Sample> train(samples.begin(), samples.begin() + static_cast<long>(n_train));
  std::vector<Sample> val(samples.begin() + static_cast<long>(n_train), samples.end());
  return {std::move(train), std::move(val)};
}

namespace {

std::vector<std::string> read_id_file(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

}  // namespace

void write_manifests(const std::string& dir, const std::vector<Sample>& train,
                     const std::vector<Sample>& val) {
  std::ofstream t(fs::path(dir) / "train.txt"), v(fs::path(dir) / "val.txt");
  for (const Sample& s : train) t << s.id << "\n";
  for (const Sample& s : val) v << s.id << "\n";
}

bool apply_manifests(const std::string& dir, const std::vector<Sample>& all,
                     std::vector<Sample>& train, std::vector<Sample>& val) {
  const fs::path tp = fs::path(dir) / "train.txt", vp = fs::path(dir) / "val.txt";
  if (!fs::exists(tp) || !fs::exists(vp)) return false;
  std::unordered_map<std::string, const Sample*> by_id;
  for (const Sample& s : all) by_id[s.id] = &s;
  auto pick = [&](const std::vector<std::string>& ids, std::vector<Sample>& dst,
                  const char* which) {
    for (const std::string& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end())
        fail("apply_manifests: " + std::string(which) + ".txt names '" + id +
             "' which is not in the dataset");
      dst.push_back(*it->second);
    }
  };
  train.clear();
  val.clear();
  pick(read_id_file(tp), train, "train");
  pick(read_id_file(vp), val, "val");
  return true;
}

}  // namespace bunet
