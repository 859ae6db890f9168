#include "kad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "kad/pnm.hpp"

namespace fs = std::filesystem;

namespace kad {

namespace {

struct Vec2 {
  float x = 0, y = 0;
};

float cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

void rasterize_shape(int type, Rng& rng, int hw, std::vector<float>& img,
                     IntMask& mask) {
  float color[3];
  for (float& c : color) c = rng.uniform(0.2f, 1.0f);
  const float span = static_cast<float>(hw);

  auto paint = [&](int y, int x) {
    for (int c = 0; c < 3; ++c)
      img[(static_cast<size_t>(c) * hw + y) * hw + x] = color[c];
    mask.at(0, y, x) = type;
  };

  if (type == 1) {  // circle
    const float cx = rng.uniform(0.15f, 0.85f) * span;
    const float cy = rng.uniform(0.15f, 0.85f) * span;
    const float r = rng.uniform(0.10f, 0.22f) * span;
    for (int y = 0; y < hw; ++y)
      for (int x = 0; x < hw; ++x) {
        const float dx = x + 0.5f - cx, dy = y + 0.5f - cy;
        if (dx * dx + dy * dy <= r * r) paint(y, x);
      }
  } else if (type == 2) {  // axis-aligned rectangle
    const float cx = rng.uniform(0.15f, 0.85f) * span;
    const float cy = rng.uniform(0.15f, 0.85f) * span;
    const float ex = rng.uniform(0.08f, 0.20f) * span;
    const float ey = rng.uniform(0.08f, 0.20f) * span;
    for (int y = 0; y < hw; ++y)
      for (int x = 0; x < hw; ++x)
        if (std::fabs(x + 0.5f - cx) <= ex && std::fabs(y + 0.5f - cy) <= ey)
          paint(y, x);
  } else {  // triangle with a lower bound on area
    Vec2 v[3];
    for (int attempt = 0; attempt < 16; ++attempt) {
      for (auto& p : v) {
        p.x = rng.uniform(0.10f, 0.90f) * span;
        p.y = rng.uniform(0.10f, 0.90f) * span;
      }
      if (std::fabs(cross(v[0], v[1], v[2])) >= 0.02f * span * span) break;
    }
    for (int y = 0; y < hw; ++y)
      for (int x = 0; x < hw; ++x) {
        const Vec2 p{x + 0.5f, y + 0.5f};
        const float c0 = cross(v[0], v[1], p);
        const float c1 = cross(v[1], v[2], p);
        const float c2 = cross(v[2], v[0], p);
        const bool neg = c0 < 0 || c1 < 0 || c2 < 0;
        const bool pos = c0 > 0 || c1 > 0 || c2 > 0;
        if (!(neg && pos)) paint(y, x);
      }
  }
}

std::string format_spec(const DatasetSpec& s) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "num_train=%d num_val=%d image_size=%d num_classes=%d "
                "min_shapes=%d max_shapes=%d noise=%.6g seed=%llu",
                s.num_train, s.num_val, s.image_size, s.num_classes,
                s.min_shapes, s.max_shapes, static_cast<double>(s.noise),
                static_cast<unsigned long long>(s.seed));
  return buf;
}

DatasetSpec parse_spec_line(const std::string& line, const std::string& where) {
  DatasetSpec s;
  unsigned long long seed = 0;
  double noise = 0.0;
  const int n = std::sscanf(line.c_str(),
                            "num_train=%d num_val=%d image_size=%d "
                            "num_classes=%d min_shapes=%d max_shapes=%d "
                            "noise=%lf seed=%llu",
                            &s.num_train, &s.num_val, &s.image_size,
                            &s.num_classes, &s.min_shapes, &s.max_shapes,
                            &noise, &seed);
  if (n != 8)
    throw IoError("manifest " + where + ": malformed spec header '" + line + "'");
  s.noise = static_cast<float>(noise);
  s.seed = seed;
  return s;
}

ImageU8 to_u8_image(const Tensor& img) {
  ImageU8 out;
  out.channels = 3;
  out.h = img.dim(1);
  out.w = img.dim(2);
  out.pixels.resize(static_cast<size_t>(3) * out.h * out.w);
  for (int y = 0; y < out.h; ++y)
    for (int x = 0; x < out.w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = static_cast<uint8_t>(std::lround(
            img.data()[(static_cast<size_t>(c) * out.h + y) * out.w + x] * 255.0f));
  return out;
}

}  // namespace

SegSample render_sample(const DatasetSpec& spec, uint64_t sample_seed) {
  Rng rng(sample_seed);
  const int hw = spec.image_size;
  std::vector<float> img(static_cast<size_t>(3) * hw * hw);

  SegSample out;
  out.mask.n = 1;
  out.mask.h = out.mask.w = hw;
  out.mask.v.assign(static_cast<size_t>(hw) * hw, 0);

  float bg[3];
  for (float& c : bg) c = rng.uniform(0.15f, 0.45f);
  for (int c = 0; c < 3; ++c)
    std::fill(img.begin() + static_cast<size_t>(c) * hw * hw,
              img.begin() + static_cast<size_t>(c + 1) * hw * hw, bg[c]);

  const int range = spec.max_shapes - spec.min_shapes + 1;
  const int nshapes =
      spec.min_shapes + (range > 1 ? static_cast<int>(rng.uniform_int(
                                         static_cast<uint64_t>(range)))
                                   : 0);
  for (int i = 0; i < nshapes; ++i) {
    const int type = 1 + static_cast<int>(rng.uniform_int(3));
    rasterize_shape(type, rng, hw, img, out.mask);
  }

  for (float& v : img) {
    v += rng.uniform(-spec.noise, spec.noise);
    v = std::clamp(v, 0.0f, 1.0f);
    // snap to the 8-bit grid so in-memory samples equal their decoded files
    v = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
  }
  out.image = Tensor::from({3, hw, hw}, std::move(img));
  return out;
}

GeneratedDataset generate(const DatasetSpec& spec, const std::string& out_dir) {
  if (spec.num_classes != 4)
    throw ConfigError("the synthetic set defines exactly 4 classes, got " +
                      std::to_string(spec.num_classes));
  if (spec.min_shapes < 0 || spec.max_shapes < spec.min_shapes)
    throw ConfigError("bad shape count range [" + std::to_string(spec.min_shapes) +
                      "," + std::to_string(spec.max_shapes) + "]");
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "train", ec);
  fs::create_directories(fs::path(out_dir) / "val", ec);
  if (ec) throw IoError("generate: cannot create " + out_dir + ": " + ec.message());

  GeneratedDataset result;
  for (const auto& [split, count] :
       {std::pair<std::string, int>{"train", spec.num_train},
        std::pair<std::string, int>{"val", spec.num_val}}) {
    const fs::path manifest_path = fs::path(out_dir) / (split + ".manifest");
    std::ofstream manifest(manifest_path);
    if (!manifest) throw IoError("generate: cannot write " + manifest_path.string());
    manifest << "# synthetic shapes dataset\n";
    manifest << "# " << format_spec(spec) << "\n";
    manifest << "# split=" << split << " count=" << count << "\n";
    for (int i = 0; i < count; ++i) {
      SegSample s = render_sample(
          spec, derive_seed(spec.seed, split + ":" + std::to_string(i)));
      char img_name[64], msk_name[64];
      std::snprintf(img_name, sizeof(img_name), "%s/img_%04d.ppm", split.c_str(), i);
      std::snprintf(msk_name, sizeof(msk_name), "%s/msk_%04d.pgm", split.c_str(), i);
      write_pnm((fs::path(out_dir) / img_name).string(), to_u8_image(s.image));
      ImageU8 m;
      m.channels = 1;
      m.h = m.w = spec.image_size;
      m.pixels.resize(s.mask.v.size());
      for (size_t j = 0; j < m.pixels.size(); ++j)
        m.pixels[j] = static_cast<uint8_t>(s.mask.v[j]);
      write_pnm((fs::path(out_dir) / msk_name).string(), m);
      manifest << img_name << "\t" << msk_name << "\n";
    }
    if (!manifest) throw IoError("generate: short write to " + manifest_path.string());
    (split == "train" ? result.train_manifest : result.val_manifest) =
        manifest_path.string();
  }
  return result;
}

Dataset Dataset::load(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw IoError("Dataset::load: cannot open " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  Dataset ds;
  bool have_spec = false;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# num_train=", 0) == 0) {
        ds.spec_ = parse_spec_line(line.substr(2), manifest_path);
        have_spec = true;
      }
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw IoError("Dataset::load: " + manifest_path +
                    ": line without tab separator: '" + line + "'");
    const std::string img_path = (base / line.substr(0, tab)).string();
    const std::string msk_path = (base / line.substr(tab + 1)).string();

    ImageU8 img = read_pnm(img_path);
    if (img.channels != 3)
      throw IoError("Dataset::load: " + img_path + " is not a color image");
    ImageU8 msk = read_pnm(msk_path);
    if (msk.channels != 1)
      throw IoError("Dataset::load: " + msk_path + " is not a grayscale mask");
    if (img.h != msk.h || img.w != msk.w)
      throw IoError("Dataset::load: size mismatch between " + img_path + " and " +
                    msk_path);

    SegSample s;
    std::vector<float> vals(static_cast<size_t>(3) * img.h * img.w);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
          vals[(static_cast<size_t>(c) * img.h + y) * img.w + x] =
              static_cast<float>(img.at(c, y, x)) / 255.0f;
    s.image = Tensor::from({3, img.h, img.w}, std::move(vals));
    s.mask.n = 1;
    s.mask.h = msk.h;
    s.mask.w = msk.w;
    s.mask.v.resize(msk.pixels.size());
    const int k = have_spec ? ds.spec_.num_classes : 4;
    for (size_t i = 0; i < msk.pixels.size(); ++i) {
      const int v = msk.pixels[i];
      if (v != kIgnoreLabel && v >= k)
        throw IoError("Dataset::load: " + msk_path + ": mask value " +
                      std::to_string(v) + " outside [0," + std::to_string(k) +
                      ") and not the ignore label");
      s.mask.v[i] = v;
    }
    ds.samples_.push_back(std::move(s));
  }
  if (!have_spec)
    throw IoError("Dataset::load: " + manifest_path + ": missing spec header");
  if (ds.samples_.empty())
    throw IoError("Dataset::load: " + manifest_path + ": no samples listed");
  return ds;
}

SegSample augment_sample(const SegSample& in, Rng& rng, float scale_min,
                         float scale_max) {
  const int h = in.image.dim(1), w = in.image.dim(2);
  SegSample cur;
  cur.image = in.image;
  cur.mask = in.mask;

  // horizontal flip, applied identically to image and mask
  if (rng.uniform() < 0.5f) {
    Tensor flipped = Tensor::zeros({3, h, w});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          flipped.data()[(static_cast<size_t>(c) * h + y) * w + x] =
              cur.image.data()[(static_cast<size_t>(c) * h + y) * w + (w - 1 - x)];
    IntMask fm = cur.mask;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) fm.at(0, y, x) = cur.mask.at(0, y, w - 1 - x);
    cur.image = flipped;
    cur.mask = fm;
  }

  const float s = rng.uniform(scale_min, scale_max);
  const int nh = std::max(1, static_cast<int>(std::lround(h * s)));
  const int nw = std::max(1, static_cast<int>(std::lround(w * s)));
  const int offy = static_cast<int>(rng.uniform_int(
      static_cast<uint64_t>(std::abs(nh - h)) + 1));
  const int offx = static_cast<int>(rng.uniform_int(
      static_cast<uint64_t>(std::abs(nw - w)) + 1));
  if (nh == h && nw == w) return cur;

  // image: bilinear resize (no tape active here, plain resampling)
  Tensor batched = Tensor::zeros({1, 3, h, w});
  std::copy(cur.image.data(), cur.image.data() + cur.image.numel(),
            batched.data());
  Tensor resized = upsample_bilinear(batched, nh, nw, false);

  // mask: nearest-neighbor resize
  IntMask rmask;
  rmask.n = 1;
  rmask.h = nh;
  rmask.w = nw;
  rmask.v.resize(static_cast<size_t>(nh) * nw);
  for (int y = 0; y < nh; ++y) {
    const int sy = std::min(h - 1, static_cast<int>((y + 0.5f) * h / nh));
    for (int x = 0; x < nw; ++x) {
      const int sx = std::min(w - 1, static_cast<int>((x + 0.5f) * w / nw));
      rmask.at(0, y, x) = cur.mask.at(0, sy, sx);
    }
  }

  SegSample out;
  out.image = Tensor::zeros({3, h, w});
  out.mask.n = 1;
  out.mask.h = h;
  out.mask.w = w;
  out.mask.v.assign(static_cast<size_t>(h) * w, kIgnoreLabel);

  if (nh >= h && nw >= w) {  // crop a window back to (h, w)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.image.data()[(static_cast<size_t>(c) * h + y) * w + x] =
              resized.data()[(static_cast<size_t>(c) * nh + y + offy) * nw + x +
                             offx];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.mask.at(0, y, x) = rmask.at(0, y + offy, x + offx);
  } else {  // pad: place the shrunk sample at a random offset
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < nh; ++y)
        for (int x = 0; x < nw; ++x)
          out.image.data()[(static_cast<size_t>(c) * h + y + offy) * w + x + offx] =
              resized.data()[(static_cast<size_t>(c) * nh + y) * nw + x];
    for (int y = 0; y < nh; ++y)
      for (int x = 0; x < nw; ++x)
        out.mask.at(0, y + offy, x + offx) = rmask.at(0, y, x);
  }
  return out;
}

BatchStream::BatchStream(const Dataset& dataset, int batch_size, bool augment,
                         uint64_t seed)
    : dataset_(&dataset), batch_size_(batch_size), augment_(augment), seed_(seed) {
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
}

int BatchStream::sample_index(int64_t epoch, int64_t pos) const {
  if (epoch != cached_epoch_) {
    cached_perm_.resize(static_cast<size_t>(dataset_->size()));
    std::iota(cached_perm_.begin(), cached_perm_.end(), 0);
    Rng perm_rng(derive_seed(seed_, "order:" + std::to_string(epoch)));
    perm_rng.shuffle(cached_perm_);
    cached_epoch_ = epoch;
  }
  return cached_perm_[static_cast<size_t>(pos)];
}

Batch BatchStream::at(int64_t iteration) const {
  const int hw = dataset_->image_size();
  const int n = dataset_->size();
  Batch batch;
  batch.images = Tensor::zeros({batch_size_, 3, hw, hw});
  batch.labels.n = batch_size_;
  batch.labels.h = batch.labels.w = hw;
  batch.labels.v.resize(static_cast<size_t>(batch_size_) * hw * hw);

  const int64_t plane = static_cast<int64_t>(hw) * hw;
  for (int i = 0; i < batch_size_; ++i) {
    const int64_t global = iteration * batch_size_ + i;
    const int64_t epoch = global / n;
    const int idx = sample_index(epoch, global % n);
    SegSample s = dataset_->sample(idx);
    if (augment_) {
      Rng rng(derive_seed(seed_, "aug:" + std::to_string(global)));
      s = augment_sample(s, rng);
    }
    std::copy(s.image.data(), s.image.data() + 3 * plane,
              batch.images.data() + static_cast<int64_t>(i) * 3 * plane);
    std::copy(s.mask.v.begin(), s.mask.v.end(),
              batch.labels.v.begin() + static_cast<size_t>(i * plane));
  }
  return batch;
}

}  // namespace kad
