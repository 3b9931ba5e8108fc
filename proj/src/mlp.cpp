#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include <fmt/core.h>

#include "dispatch/surrogates.hpp"

namespace dispatch::surrogate {

static_assert(std::endian::native == std::endian::little,
              "network files are little-endian; add byte swapping for this target");

VectorXd MlpSurrogate::parameters() const {
    VectorXd theta(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    auto put = [&](const double* data, Eigen::Index n) {
        theta.segment(k, n) = Eigen::Map<const VectorXd>(data, n);
        k += n;
    };
    put(w1.data(), w1.size());
    put(b1.data(), b1.size());
    put(w2.data(), w2.size());
    put(b2.data(), b2.size());
    return theta;
}

void MlpSurrogate::set_parameters(const VectorXd& theta) {
    if (theta.size() != static_cast<Eigen::Index>(parameter_count()))
        throw DimensionMismatch(fmt::format("expected {} parameters, got {}", parameter_count(), theta.size()));
    Eigen::Index k = 0;
    auto take = [&](double* data, Eigen::Index n) {
        Eigen::Map<VectorXd>(data, n) = theta.segment(k, n);
        k += n;
    };
    take(w1.data(), w1.size());
    take(b1.data(), b1.size());
    take(w2.data(), w2.size());
    take(b2.data(), b2.size());
}

bool MlpSurrogate::operator==(const MlpSurrogate& o) const {
    auto same = [](const auto& a, const auto& b) {
        return a.rows() == b.rows() && a.cols() == b.cols() &&
               (a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
    };
    return in_dim == o.in_dim && hidden_dim == o.hidden_dim && out_dim == o.out_dim &&
           activation == o.activation && seed == o.seed && same(w1, o.w1) && same(b1, o.b1) &&
           same(w2, o.w2) && same(b2, o.b2) && same(in_shift, o.in_shift) &&
           same(in_scale, o.in_scale) && same(out_shift, o.out_shift) && same(out_scale, o.out_scale);
}

MlpSurrogate make_zero_network(std::size_t in, std::size_t hidden, std::size_t out) {
    if (in == 0 || hidden == 0 || out == 0)
        throw Error("surrogates", "network dimensions must be positive");
    MlpSurrogate net;
    net.in_dim = in;
    net.hidden_dim = hidden;
    net.out_dim = out;
    const auto i = static_cast<Eigen::Index>(in), h = static_cast<Eigen::Index>(hidden),
               o = static_cast<Eigen::Index>(out);
    net.w1 = RowMatrix::Zero(i, h);
    net.b1 = VectorXd::Zero(h);
    net.w2 = RowMatrix::Zero(h, o);
    net.b2 = VectorXd::Zero(o);
    return net;
}

MlpSurrogate make_network(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
    MlpSurrogate net = make_zero_network(in, hidden, out);
    net.seed = seed;
    // mt19937_64 output is fixed by the standard; the [0,1) mapping is done
    // here so the weights do not depend on the library's distributions.
    std::mt19937_64 rng(seed);
    auto fill = [&](double* data, Eigen::Index n, double bound) {
        for (Eigen::Index k = 0; k < n; ++k) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            data[k] = bound * (2.0 * u - 1.0);
        }
    };
    const double b_in = 1.0 / std::sqrt(static_cast<double>(in));
    const double b_hidden = 1.0 / std::sqrt(static_cast<double>(hidden));
    fill(net.w1.data(), net.w1.size(), b_in);
    fill(net.b1.data(), net.b1.size(), b_in);
    fill(net.w2.data(), net.w2.size(), b_hidden);
    fill(net.b2.data(), net.b2.size(), b_hidden);
    return net;
}

VectorXd forward(const MlpSurrogate& net, std::span<const double> input) {
    if (input.size() != net.in_dim)
        throw DimensionMismatch(
            fmt::format("network expects {} inputs, got {}", net.in_dim, input.size()));
    VectorXd x = Eigen::Map<const VectorXd>(input.data(), static_cast<Eigen::Index>(input.size()));
    if (net.normalized()) x = ((x - net.in_shift).array() / net.in_scale.array()).matrix();
    VectorXd h = (net.w1.transpose() * x + net.b1).cwiseMax(0.0);
    VectorXd y = net.w2.transpose() * h + net.b2;
    if (net.normalized()) y = (y.array() * net.out_scale.array() + net.out_shift.array()).matrix();
    return y;
}

Eigen::MatrixXd forward_batch(const MlpSurrogate& net, const Eigen::MatrixXd& inputs) {
    if (inputs.cols() != static_cast<Eigen::Index>(net.in_dim))
        throw DimensionMismatch(
            fmt::format("network expects {} inputs, got {}", net.in_dim, inputs.cols()));
    Eigen::MatrixXd x = inputs;
    if (net.normalized())
        x = ((x.rowwise() - net.in_shift.transpose()).array().rowwise() /
             net.in_scale.transpose().array()).matrix();
    Eigen::MatrixXd h = ((x * net.w1).rowwise() + net.b1.transpose()).cwiseMax(0.0);
    Eigen::MatrixXd y = (h * net.w2).rowwise() + net.b2.transpose();
    if (net.normalized())
        y = ((y.array().rowwise() * net.out_scale.transpose().array()).rowwise() +
             net.out_shift.transpose().array()).matrix();
    return y;
}

SurrogateSet build_surrogate(const SetupDims& dims, std::size_t hidden, std::uint64_t seed) {
    SurrogateSet set;
    set.dims = dims;
    set.hidden = hidden;
    if (dims.setup == Setup::Centralized) {
        set.nets.push_back(make_network(dims.in_dim, hidden, dims.out_dim, seed));
    } else {
        set.nets.reserve(dims.n_agents);
        for (std::size_t i = 0; i < dims.n_agents; ++i)
            set.nets.push_back(make_network(dims.in_dim, hidden, dims.out_dim, grid::derive_seed(seed, i)));
    }
    return set;
}

// ---------------------------------------------------------------------------
// Binary format (little-endian):
//   "PDXMLP01", u64 in, u64 hidden, u64 out, u64 seed, u32 activation,
//   u32 normalized, [in_shift, in_scale, out_shift, out_scale], w1, b1, w2, b2
// Matrices are row-major doubles.

namespace {

constexpr char kMagic[8] = {'P', 'D', 'X', 'M', 'L', 'P', '0', '1'};

template <class T>
void put(std::vector<std::uint8_t>& buf, const T& value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    buf.insert(buf.end(), p, p + sizeof(T));
}

void put_doubles(std::vector<std::uint8_t>& buf, const double* data, Eigen::Index n) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(data);
    buf.insert(buf.end(), p, p + sizeof(double) * static_cast<std::size_t>(n));
}

class Cursor {
public:
    explicit Cursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        T value;
        read(&value, sizeof(T));
        return value;
    }
    void get_doubles(double* data, Eigen::Index n) {
        read(data, sizeof(double) * static_cast<std::size_t>(n));
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void read(void* dst, std::size_t n) {
        if (pos_ + n > bytes_.size()) throw Error("surrogates", "truncated network file");
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_network(const MlpSurrogate& net) {
    std::vector<std::uint8_t> buf(std::begin(kMagic), std::end(kMagic));
    put<std::uint64_t>(buf, net.in_dim);
    put<std::uint64_t>(buf, net.hidden_dim);
    put<std::uint64_t>(buf, net.out_dim);
    put<std::uint64_t>(buf, net.seed);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(net.activation));
    put<std::uint32_t>(buf, net.normalized() ? 1u : 0u);
    if (net.normalized()) {
        put_doubles(buf, net.in_shift.data(), net.in_shift.size());
        put_doubles(buf, net.in_scale.data(), net.in_scale.size());
        put_doubles(buf, net.out_shift.data(), net.out_shift.size());
        put_doubles(buf, net.out_scale.data(), net.out_scale.size());
    }
    put_doubles(buf, net.w1.data(), net.w1.size());
    put_doubles(buf, net.b1.data(), net.b1.size());
    put_doubles(buf, net.w2.data(), net.w2.size());
    put_doubles(buf, net.b2.data(), net.b2.size());
    return buf;
}

MlpSurrogate deserialize_network(std::span<const std::uint8_t> bytes) {
    Cursor cur(bytes);
    char magic[8];
    for (char& c : magic) c = static_cast<char>(cur.get<std::uint8_t>());
    if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw Error("surrogates", "not a network file");
    const auto in = cur.get<std::uint64_t>();
    const auto hidden = cur.get<std::uint64_t>();
    const auto out = cur.get<std::uint64_t>();
    MlpSurrogate net = make_zero_network(in, hidden, out);
    net.seed = cur.get<std::uint64_t>();
    const auto act = cur.get<std::uint32_t>();
    if (act != static_cast<std::uint32_t>(Activation::Relu))
        throw Error("surrogates", fmt::format("unknown activation tag {}", act));
    if (cur.get<std::uint32_t>() != 0) {
        const auto i = static_cast<Eigen::Index>(in), o = static_cast<Eigen::Index>(out);
        net.in_shift.resize(i);
        net.in_scale.resize(i);
        net.out_shift.resize(o);
        net.out_scale.resize(o);
        cur.get_doubles(net.in_shift.data(), i);
        cur.get_doubles(net.in_scale.data(), i);
        cur.get_doubles(net.out_shift.data(), o);
        cur.get_doubles(net.out_scale.data(), o);
    }
    cur.get_doubles(net.w1.data(), net.w1.size());
    cur.get_doubles(net.b1.data(), net.b1.size());
    cur.get_doubles(net.w2.data(), net.w2.size());
    cur.get_doubles(net.b2.data(), net.b2.size());
    if (!cur.done()) throw Error("surrogates", "trailing bytes after network");
    return net;
}

void write_network(const std::filesystem::path& path, const MlpSurrogate& net) {
    const auto bytes = serialize_network(net);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("surrogates", fmt::format("cannot write '{}'", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

MlpSurrogate read_network(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("surrogates", fmt::format("cannot open '{}'", path.string()));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_network(bytes);
}

namespace {
std::filesystem::path net_path(const std::filesystem::path& dir, Setup setup, std::size_t k) {
    return dir / fmt::format("{}_net{}.mlp", to_string(setup), k);
}
}  // namespace

void write_surrogate_set(const std::filesystem::path& dir, const SurrogateSet& set) {
    std::filesystem::create_directories(dir);
    for (std::size_t k = 0; k < set.nets.size(); ++k) write_network(net_path(dir, set.dims.setup, k), set.nets[k]);
}

SurrogateSet read_surrogate_set(const std::filesystem::path& dir, const SetupDims& dims) {
    SurrogateSet set;
    set.dims = dims;
    for (std::size_t k = 0; k < dims.networks(); ++k) {
        auto net = read_network(net_path(dir, dims.setup, k));
        if (net.in_dim != dims.in_dim || net.out_dim != dims.out_dim)
            throw DimensionMismatch(fmt::format("{} has shape {}x{}, expected {}x{}",
                                                net_path(dir, dims.setup, k).string(), net.in_dim,
                                                net.out_dim, dims.in_dim, dims.out_dim));
        if (k > 0 && net.hidden_dim != set.hidden)
            throw DimensionMismatch("networks of one setup must share a hidden width");
        set.hidden = net.hidden_dim;
        set.nets.push_back(std::move(net));
    }
    return set;
}

}  // namespace dispatch::surrogate
