#include <gtest/gtest.h>

#include <filesystem>
#include <limits>

#include "swcl/rng.hpp"
#include "swcl/tensor.hpp"

using namespace swcl;

namespace {

std::filesystem::path temp_dir(const char* name) {
    auto dir = std::filesystem::temp_directory_path() / "swcl_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

TEST(Tensor, ShapeProductMustMatchDataLength) {
    EXPECT_NO_THROW(Tensor({2, 3}, std::vector<double>(6, 1.0)));
    EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5, 1.0)), ValidationError);
}

TEST(Tensor, CheckedModeRejectsNonFinite) {
    std::vector<double> bad = {1.0, std::numeric_limits<double>::quiet_NaN()};
    EXPECT_THROW(Tensor::checked({2}, bad), NumericalError);
    std::vector<double> inf = {1.0, std::numeric_limits<double>::infinity()};
    EXPECT_THROW(Tensor::checked({2}, inf), NumericalError);
    EXPECT_NO_THROW(Tensor::checked({2}, {1.0, -2.0}));
}

TEST(Tensor, FileRoundTripPreservesShapeAndF32Values) {
    const auto dir = temp_dir("tensor_roundtrip");
    RngStream rng(3);
    Tensor t({2, 3, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-5.0, 5.0);
    save_tensor_f32(dir / "t.f32t", t);
    const Tensor back = load_tensor_f32(dir / "t.f32t");
    ASSERT_EQ(back.shape(), t.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
        EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(t[i])));
}

TEST(Tensor, LoadRejectsBadMagic) {
    const auto dir = temp_dir("tensor_magic");
    {
        std::ofstream os(dir / "bad.f32t", std::ios::binary);
        os << "NOPE1234";
    }
    EXPECT_THROW(load_tensor_f32(dir / "bad.f32t"), ValidationError);
    EXPECT_THROW(load_tensor_f32(dir / "missing.f32t"), ValidationError);
}

TEST(Checkpoint, RoundTripKeepsNamesAndOrder) {
    const auto dir = temp_dir("checkpoint");
    NetworkParams params;
    params["b.weight"] = Tensor::full({2, 2}, 1.5);
    params["a.bias"] = Tensor::full({3}, -0.25);
    save_checkpoint(dir / "c.ckpt", params);
    const NetworkParams back = load_checkpoint(dir / "c.ckpt");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back.begin()->first, "a.bias");  // lexicographic iteration
    EXPECT_EQ(back.at("b.weight").shape(), (std::vector<std::size_t>{2, 2}));
    EXPECT_EQ(back.at("a.bias")[0], -0.25);
}

TEST(Checkpoint, SaveIsByteDeterministic) {
    const auto dir = temp_dir("checkpoint_det");
    NetworkParams params;
    RngStream rng(9);
    Tensor t({4, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    params["w"] = t;
    save_checkpoint(dir / "a.ckpt", params);
    save_checkpoint(dir / "b.ckpt", params);
    std::ifstream a(dir / "a.ckpt", std::ios::binary), b(dir / "b.ckpt", std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    EXPECT_EQ(sa, sb);
    EXPECT_FALSE(sa.empty());
}

TEST(Rng, StreamsAreReproducibleAndKeyed) {
    RngStream a(42, "x"), b(42, "x"), c(42, "y");
    EXPECT_EQ(a.next_u64(), b.next_u64());
    EXPECT_NE(a.next_u64(), c.next_u64());
    RngStream u(7);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        ASSERT_GE(v, 0.0);
        ASSERT_LT(v, 1.0);
    }
}

}  // namespace
