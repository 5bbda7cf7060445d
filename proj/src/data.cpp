#include "ghostnoise/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ghostnoise {

namespace {

void fisher_yates(std::vector<std::size_t>& order, RngStream& rng) {
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = rng.uniform_below(i);
        std::swap(order[i - 1], order[j]);
    }
}

Dataset assemble(const Matrix& x, const std::vector<int>& y,
                 std::size_t classes, const std::vector<std::size_t>& order,
                 std::size_t n_val, std::size_t n_test) {
    const std::size_t n = order.size();
    const std::size_t n_train = n - n_val - n_test;
    Dataset ds;
    ds.classes = classes;
    auto fill = [&](Matrix& mx, std::vector<int>& my, std::size_t begin,
                    std::size_t count) {
        mx = Matrix(count, x.cols);
        my.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t src = order[begin + i];
            std::copy(x.row(src), x.row(src) + x.cols, mx.row(i));
            my[i] = y[src];
        }
    };
    fill(ds.train_x, ds.train_y, 0, n_train);
    fill(ds.val_x, ds.val_y, n_train, n_val);
    fill(ds.test_x, ds.test_y, n_train + n_val, n_test);
    return ds;
}

std::uint32_t read_u32_be(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("idx: truncated header in " + path);
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
           (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
}

}  // namespace

Dataset make_blobs(std::size_t n, std::size_t dim, std::size_t classes,
                   double class_separation, double label_noise,
                   RngStream rng) {
    if (classes < 2 || n < classes) {
        throw std::invalid_argument("make_blobs: need n >= classes >= 2");
    }
    if (dim == 0) {
        throw std::invalid_argument("make_blobs: dim must be >= 1");
    }
    if (label_noise < 0.0 || label_noise > 1.0) {
        throw std::invalid_argument("make_blobs: label_noise must be in [0,1]");
    }

    // Class centers on a sphere of the requested radius.
    Matrix centers(classes, dim);
    for (std::size_t k = 0; k < classes; ++k) {
        double norm2 = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            centers(k, d) = rng.normal();
            norm2 += centers(k, d) * centers(k, d);
        }
        const double scale =
            norm2 > 0.0 ? class_separation / std::sqrt(norm2) : 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            centers(k, d) *= scale;
        }
    }

    Matrix x(n, dim);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t truth = i % classes;  // balanced classes
        for (std::size_t d = 0; d < dim; ++d) {
            x(i, d) = centers(truth, d) + rng.normal();
        }
        int label = static_cast<int>(truth);
        if (label_noise > 0.0 && rng.uniform01() < label_noise) {
            label = static_cast<int>(rng.uniform_below(classes));
        }
        y[i] = label;
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    fisher_yates(order, rng);
    const std::size_t n_val = n / 10;
    const std::size_t n_test = n / 10;
    return assemble(x, y, classes, order, n_val, n_test);
}

std::uint64_t idx_image_bytes(std::uint64_t n, std::uint64_t rows,
                              std::uint64_t cols) {
    return 16 + n * rows * cols;
}

std::uint64_t idx_label_bytes(std::uint64_t n) { return 8 + n; }

IdxData load_idx(const std::string& images_path,
                 const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) {
        throw std::runtime_error("idx: cannot open " + images_path);
    }
    if (read_u32_be(imgs, images_path) != 0x00000803u) {
        throw std::runtime_error("idx: bad image magic in " + images_path);
    }
    const std::uint32_t n = read_u32_be(imgs, images_path);
    const std::uint32_t rows = read_u32_be(imgs, images_path);
    const std::uint32_t cols = read_u32_be(imgs, images_path);
    const std::size_t dim = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * dim);
    if (!imgs.read(reinterpret_cast<char*>(pixels.data()),
                   static_cast<std::streamsize>(pixels.size()))) {
        throw std::runtime_error("idx: truncated image data in " + images_path);
    }

    std::ifstream labs(labels_path, std::ios::binary);
    if (!labs) {
        throw std::runtime_error("idx: cannot open " + labels_path);
    }
    if (read_u32_be(labs, labels_path) != 0x00000801u) {
        throw std::runtime_error("idx: bad label magic in " + labels_path);
    }
    const std::uint32_t n_labels = read_u32_be(labs, labels_path);
    if (n_labels != n) {
        char msg[128];
        std::snprintf(msg, sizeof msg,
                      "idx: image/label count mismatch (%u images, %u labels)",
                      n, n_labels);
        throw std::runtime_error(msg);
    }
    std::vector<unsigned char> labels(n);
    if (!labs.read(reinterpret_cast<char*>(labels.data()),
                   static_cast<std::streamsize>(labels.size()))) {
        throw std::runtime_error("idx: truncated label data in " + labels_path);
    }

    IdxData out;
    out.rows = rows;
    out.cols = cols;
    out.x = Matrix(n, dim);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        out.x.data[i] = static_cast<double>(pixels[i]) / 255.0;
    }
    out.y.assign(labels.begin(), labels.end());
    return out;
}

Dataset split_dataset(const Matrix& x, const std::vector<int>& y,
                      std::size_t classes, double eval_fraction,
                      RngStream rng) {
    if (x.rows != y.size()) {
        throw std::invalid_argument("split_dataset: x/y size mismatch");
    }
    if (!(eval_fraction > 0.0 && eval_fraction < 0.5)) {
        throw std::invalid_argument(
            "split_dataset: eval_fraction must be in (0, 0.5)");
    }
    std::vector<std::size_t> order(x.rows);
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    fisher_yates(order, rng);
    const std::size_t n_eval = static_cast<std::size_t>(
        static_cast<double>(x.rows) * eval_fraction);
    return assemble(x, y, classes, order, n_eval, n_eval);
}

}  // namespace ghostnoise
