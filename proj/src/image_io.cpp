#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <memory>

#include "dbal/data.hpp"
#include "dbal/errors.hpp"

#ifdef DBAL_HAVE_PNG
#include <png.h>
#endif
#ifdef DBAL_HAVE_JPEG
#include <jpeglib.h>
#endif

namespace dbal {
namespace {

#ifdef DBAL_HAVE_PNG
RgbImage decode_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw LoadError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    RgbImage out{image.height, image.width, std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw LoadError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    return out;
}
#endif

#ifdef DBAL_HAVE_JPEG
struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
    auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
    (*info->err->format_message)(info, err->message);
    std::longjmp(err->jump, 1);
}

RgbImage decode_jpeg(const std::filesystem::path& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!file) throw LoadError("cannot open JPEG " + path.string());
    jpeg_decompress_struct info{};
    JpegErrorManager err{};
    info.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    RgbImage out;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&info);
        throw LoadError("cannot decode JPEG " + path.string() + ": " + err.message);
    }
    jpeg_create_decompress(&info);
    jpeg_stdio_src(&info, file.get());
    jpeg_read_header(&info, TRUE);
    info.out_color_space = JCS_RGB;
    jpeg_start_decompress(&info);
    out.height = info.output_height;
    out.width = info.output_width;
    out.pixels.resize(out.height * out.width * 3);
    while (info.output_scanline < info.output_height) {
        JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(info.output_scanline) * out.width * 3;
        jpeg_read_scanlines(&info, &row, 1);
    }
    jpeg_finish_decompress(&info);
    jpeg_destroy_decompress(&info);
    return out;
}
#endif

std::string lower_extension(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return ext;
}

}  // namespace

bool image_codecs_available() {
#if defined(DBAL_HAVE_PNG) && defined(DBAL_HAVE_JPEG)
    return true;
#else
    return false;
#endif
}

Tensor load_image(const std::filesystem::path& path) {
    const std::string ext = lower_extension(path);
    if (ext == ".dbt") {
        Tensor t = read_raw_tensor(path);
        if (raw_tensor_dtype(path) == RawDtype::uint8) {
            if (t.rank() != 3 || t.dim(2) != 3) {
                throw LoadError("raw byte image " + path.string() + " must be [H,W,3], got " +
                                shape_string(t.shape()));
            }
            RgbImage rgb{t.dim(0), t.dim(1), std::vector<std::uint8_t>(t.size())};
            for (std::size_t i = 0; i < t.size(); ++i) rgb.pixels[i] = static_cast<std::uint8_t>(t[i]);
            return rgb_to_tensor(rgb);
        }
        if (t.rank() != 3 || t.dim(0) != 3) {
            throw LoadError("raw float image " + path.string() + " must be [3,H,W], got " +
                            shape_string(t.shape()));
        }
        return t;
    }
#ifdef DBAL_HAVE_PNG
    if (ext == ".png") return rgb_to_tensor(decode_png(path));
#endif
#ifdef DBAL_HAVE_JPEG
    if (ext == ".jpg" || ext == ".jpeg") return rgb_to_tensor(decode_jpeg(path));
#endif
    throw LoadError("unsupported image format '" + ext + "' for " + path.string());
}

}  // namespace dbal
