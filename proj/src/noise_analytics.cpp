#include "ghostnoise/noise_analytics.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ghostnoise {

namespace {

// Regularized lower incomplete gamma P(a, x), series and continued-fraction
// branches as in the usual gammp construction.
double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) {
        throw std::invalid_argument("gamma_p: requires x >= 0 and a > 0");
    }
    if (x == 0.0) {
        return 0.0;
    }
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        // Series representation.
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-16) {
                break;
            }
        }
        return sum * std::exp(-x + a * std::log(x) - lg);
    }
    // Continued fraction for Q(a, x) = 1 - P(a, x).
    const double tiny = std::numeric_limits<double>::min() / 1e-30;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) {
            break;
        }
    }
    return 1.0 - std::exp(-x + a * std::log(x) - lg) * h;
}

}  // namespace

void ConvNoiseModel::validate() const {
    if (ghost_size == 0 || spatial_size == 0) {
        throw std::invalid_argument(
            "ConvNoiseModel: ghost_size and spatial_size must be >= 1");
    }
    if (inter_sample_var < 0.0 || intra_sample_var < 0.0) {
        throw std::invalid_argument("ConvNoiseModel: variances must be >= 0");
    }
}

double shift_noise_variance(const ConvNoiseModel& model) {
    model.validate();
    const double n = static_cast<double>(model.ghost_size);
    const double i = static_cast<double>(model.spatial_size);
    return model.intra_sample_var / (n * i) + model.inter_sample_var / n;
}

ScaleNoiseMoments scale_noise_moments(const ConvNoiseModel& model) {
    model.validate();
    const double n = static_cast<double>(model.ghost_size);
    const double i = static_cast<double>(model.spatial_size);
    const double si2 = model.intra_sample_var;
    const double sb2 = model.inter_sample_var;
    ScaleNoiseMoments m;
    m.mean = si2 + sb2;
    m.variance = 2.0 * si2 * si2 / (n * i) + 2.0 * sb2 * sb2 / n;
    return m;
}

Tensor4 sample_conv_model(const ConvNoiseModel& model, std::size_t batch,
                          std::size_t height, std::size_t width,
                          RngStream& rng) {
    model.validate();
    if (batch == 0) {
        throw std::invalid_argument("sample_conv_model: batch must be >= 1");
    }
    if (height * width != model.spatial_size) {
        throw std::invalid_argument(
            "sample_conv_model: height * width must equal spatial_size");
    }
    const double sb = std::sqrt(model.inter_sample_var);
    const double si = std::sqrt(model.intra_sample_var);
    std::vector<double> data(batch * model.spatial_size);
    for (std::size_t b = 0; b < batch; ++b) {
        const double mu = sb * rng.normal();
        for (std::size_t s = 0; s < model.spatial_size; ++s) {
            data[b * model.spatial_size + s] = mu + si * rng.normal();
        }
    }
    return Tensor4(batch, 1, height, width, std::move(data));
}

VarianceDecomposition variance_decomposition(const Tensor4& x) {
    if (x.samples() < 2) {
        throw std::invalid_argument(
            "variance_decomposition: needs at least two samples");
    }
    const PerSampleChannelStats per = spatial_stats(x);
    VarianceDecomposition out;
    out.inter_sample.resize(per.channels);
    out.intra_sample.resize(per.channels);
    for (std::size_t c = 0; c < per.channels; ++c) {
        const PooledChannel p = pool_channel(per, c);
        out.inter_sample[c] = p.between;
        out.intra_sample[c] = p.within;
    }
    return out;
}

double ks_statistic(std::vector<double> samples,
                    const std::function<double(double)>& cdf) {
    if (samples.empty()) {
        throw std::invalid_argument("ks_statistic: empty sample list");
    }
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        const double hi = static_cast<double>(i + 1) / n - f;
        const double lo = f - static_cast<double>(i) / n;
        d = std::max({d, std::abs(hi), std::abs(lo)});
    }
    return d;
}

double normal_cdf(double x, double mean, double stddev) {
    return 0.5 * std::erfc(-(x - mean) / (stddev * std::sqrt(2.0)));
}

double chi_squared_cdf(double x, double dof) {
    if (x <= 0.0) {
        return 0.0;
    }
    return gamma_p(0.5 * dof, 0.5 * x);
}

NoiseTrace::NoiseTrace(std::string layer, int epoch,
                       std::uint64_t reservoir_seed, std::size_t capacity)
    : layer_(std::move(layer)),
      epoch_(epoch),
      capacity_(capacity),
      rng_(reservoir_seed, 0x7261636557) {
    if (capacity_ == 0) {
        throw std::invalid_argument("NoiseTrace: capacity must be >= 1");
    }
}

void NoiseTrace::feed(Reservoir& r, std::span<const double> values) {
    for (double v : values) {
        ++r.seen;
        if (r.values.size() < capacity_) {
            r.values.push_back(v);
        } else {
            const std::size_t j = rng_.uniform_below(r.seen);
            if (j < capacity_) {
                r.values[j] = v;
            }
        }
    }
}

void NoiseTrace::add(std::span<const double> shift_values,
                     std::span<const double> scale_values) {
    feed(shift_, shift_values);
    feed(scale_, scale_values);
}

void NoiseTrace::add(const NoiseDraw& draw) {
    add(draw.shift, draw.scale);
}

std::size_t NoiseTrace::seen(NoiseKind kind) const {
    return kind == NoiseKind::shift ? shift_.seen : scale_.seen;
}

void record_noise(NoiseTrace& trace, const NoiseDraw& draw) {
    trace.add(draw);
}

TraceDocument trace_document(const NoiseTrace& trace, NoiseKind kind) {
    TraceDocument doc;
    doc.layer = trace.layer();
    doc.epoch = trace.epoch();
    doc.kind = kind;
    doc.values = kind == NoiseKind::shift ? trace.shift_samples()
                                          : trace.scale_samples();
    return doc;
}

std::string trace_document_to_json(const TraceDocument& doc) {
    nlohmann::json j;
    j["layer"] = doc.layer;
    j["epoch"] = doc.epoch;
    j["kind"] = doc.kind == NoiseKind::shift ? "shift" : "scale";
    j["values"] = doc.values;
    return j.dump();
}

TraceDocument trace_document_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text);
    TraceDocument doc;
    doc.layer = j.at("layer").get<std::string>();
    doc.epoch = j.at("epoch").get<int>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "shift") {
        doc.kind = NoiseKind::shift;
    } else if (kind == "scale") {
        doc.kind = NoiseKind::scale;
    } else {
        throw std::runtime_error("trace document: unknown kind '" + kind + "'");
    }
    doc.values = j.at("values").get<std::vector<double>>();
    return doc;
}

void write_trace_csv(std::ostream& os, const TraceDocument& doc) {
    os << "layer,epoch,kind,value\n";
    const char* kind = doc.kind == NoiseKind::shift ? "shift" : "scale";
    char buf[40];
    for (double v : doc.values) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << doc.layer << ',' << doc.epoch << ',' << kind << ',' << buf
           << '\n';
    }
}

std::vector<TraceDocument> read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "layer,epoch,kind,value") {
        throw std::runtime_error("trace csv: missing or malformed header");
    }
    std::vector<TraceDocument> docs;
    auto find_doc = [&](const std::string& layer, int epoch,
                        NoiseKind kind) -> TraceDocument& {
        for (auto& d : docs) {
            if (d.layer == layer && d.epoch == epoch && d.kind == kind) {
                return d;
            }
        }
        docs.push_back(TraceDocument{layer, epoch, kind, {}});
        return docs.back();
    };
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream row(line);
        std::string layer, epoch_s, kind_s, value_s;
        if (!std::getline(row, layer, ',') || !std::getline(row, epoch_s, ',') ||
            !std::getline(row, kind_s, ',') || !std::getline(row, value_s)) {
            throw std::runtime_error("trace csv: malformed row: " + line);
        }
        const NoiseKind kind =
            kind_s == "shift" ? NoiseKind::shift : NoiseKind::scale;
        find_doc(layer, std::stoi(epoch_s), kind)
            .values.push_back(std::stod(value_s));
    }
    return docs;
}

std::size_t fit_effective_n(std::span<const double> samples,
                            std::span<const std::size_t> grid,
                            NoiseKind kind) {
    if (samples.empty() || grid.empty()) {
        throw std::invalid_argument("fit_effective_n: empty samples or grid");
    }
    std::vector<double> data(samples.begin(), samples.end());
    if (kind == NoiseKind::scale) {
        for (double& v : data) {
            v = v * v;
        }
    }
    double best_d = std::numeric_limits<double>::infinity();
    std::size_t best_n = grid[0];
    for (std::size_t n : grid) {
        const double nn = static_cast<double>(n);
        std::function<double(double)> cdf;
        if (kind == NoiseKind::shift) {
            cdf = [nn](double v) {
                return normal_cdf(v, 0.0, std::sqrt(1.0 / nn));
            };
        } else {
            cdf = [nn](double v) { return chi_squared_cdf(v * nn, nn); };
        }
        const double d = ks_statistic(data, cdf);
        if (d < best_d) {
            best_d = d;
            best_n = n;
        }
    }
    return best_n;
}

}  // namespace ghostnoise
