#include "cmaseg/image.hpp"

#include <fstream>

namespace cmaseg {

namespace {

void write_pnm(const std::string& path, const char* magic, size_t w, size_t h,
               const std::vector<uint8_t>& px) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorCode::io, "cannot open image for writing: " + path);
    os << magic << "\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!os) fail(ErrorCode::io, "write failure on image: " + path);
}

void read_pnm(const std::string& path, const char* magic, size_t channels, size_t& w, size_t& h,
              std::vector<uint8_t>& px) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorCode::io, "cannot open image: " + path);
    std::string m;
    size_t maxval = 0;
    is >> m >> w >> h >> maxval;
    if (!is || m != magic || maxval != 255 || w == 0 || h == 0)
        fail(ErrorCode::io, "unsupported or corrupt " + std::string(magic) + " header: " + path);
    is.get();  // single whitespace after maxval
    px.resize(w * h * channels);
    is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (static_cast<size_t>(is.gcount()) != px.size())
        fail(ErrorCode::io, "truncated image payload: " + path);
}

}  // namespace

void write_ppm(const std::string& path, const ImageRGB& img) {
    write_pnm(path, "P6", img.w, img.h, img.px);
}

ImageRGB read_ppm(const std::string& path) {
    ImageRGB img;
    read_pnm(path, "P6", 3, img.w, img.h, img.px);
    return img;
}

void write_pgm(const std::string& path, const ImageGray& img) {
    write_pnm(path, "P5", img.w, img.h, img.px);
}

ImageGray read_pgm(const std::string& path) {
    ImageGray img;
    read_pnm(path, "P5", 1, img.w, img.h, img.px);
    return img;
}

Tensor image_to_tensor(const ImageRGB& img) {
    Tensor t = Tensor::uninitialized({3, img.h, img.w});
    const size_t plane = img.h * img.w;
    for (size_t i = 0; i < plane; ++i) {
        t.data()[i] = img.px[i * 3] / 255.0;
        t.data()[plane + i] = img.px[i * 3 + 1] / 255.0;
        t.data()[2 * plane + i] = img.px[i * 3 + 2] / 255.0;
    }
    return t;
}

Tensor mask_to_tensor(const ImageGray& img) {
    Tensor t = Tensor::uninitialized({img.h, img.w});
    for (size_t i = 0; i < img.px.size(); ++i) t.data()[i] = img.px[i] ? 1.0 : 0.0;
    return t;
}

ImageGray mask_from_tensor(const Tensor& mask, double threshold) {
    if (mask.rank() != 2) fail(ErrorCode::dim, "mask_from_tensor: expected [H, W]");
    ImageGray img;
    img.h = mask.extent(0);
    img.w = mask.extent(1);
    img.px.resize(img.h * img.w);
    for (size_t i = 0; i < img.px.size(); ++i) img.px[i] = mask.data()[i] > threshold ? 255 : 0;
    return img;
}

}  // namespace cmaseg
