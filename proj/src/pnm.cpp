#include "kad/pnm.hpp"

#include <cstdio>
#include <fstream>

#include "kad/errors.hpp"

namespace kad {

void write_pnm(const std::string& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("write_pnm: " + path + ": unsupported channel count " +
                  std::to_string(img.channels));
  if (img.pixels.size() !=
      static_cast<size_t>(img.channels) * img.h * img.w)
    throw IoError("write_pnm: " + path + ": pixel buffer size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_pnm: cannot open " + path);
  f << (img.channels == 3 ? "P6" : "P5") << "\n"
    << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("write_pnm: short write to " + path);
}

namespace {

// Skips whitespace and '#' comments between header tokens.
int next_header_int(std::istream& in, const std::string& path) {
  for (;;) {
    const int c = in.peek();
    if (c == EOF) throw IoError("read_pnm: truncated header in " + path);
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  int value = 0;
  in >> value;
  if (!in) throw IoError("read_pnm: malformed header in " + path);
  return value;
}

}  // namespace

ImageU8 read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_pnm: cannot open " + path);
  char magic[2] = {0, 0};
  f.read(magic, 2);
  if (!f || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw IoError("read_pnm: " + path + " is not a binary PGM/PPM file");
  ImageU8 img;
  img.channels = magic[1] == '6' ? 3 : 1;
  img.w = next_header_int(f, path);
  img.h = next_header_int(f, path);
  const int maxval = next_header_int(f, path);
  if (img.w <= 0 || img.h <= 0)
    throw IoError("read_pnm: " + path + ": bad dimensions " +
                  std::to_string(img.w) + "x" + std::to_string(img.h));
  if (maxval != 255)
    throw IoError("read_pnm: " + path + ": only maxval 255 is supported, got " +
                  std::to_string(maxval));
  f.get();  // single whitespace byte before the raster
  img.pixels.resize(static_cast<size_t>(img.channels) * img.h * img.w);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw IoError("read_pnm: truncated raster in " + path);
  return img;
}

}  // namespace kad
