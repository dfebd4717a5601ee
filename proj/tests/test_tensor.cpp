#include "rskt/tensor.hpp"
#include "rskt/tensor_io.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>

using namespace rskt;

TEST_SUITE_BEGIN("tensor");

TEST_CASE("shape bookkeeping") {
    Tensor t(Shape{2, 3, 4});
    CHECK(t.size() == 24);
    CHECK(t.rank() == 3);
    t.at({1, 2, 3}) = 5.0f;
    CHECK(t[23] == 5.0f);
    CHECK_THROWS_AS(t.at({2, 0, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
}

TEST_CASE("rot90 identity cases") {
    auto t = oracle::random_tensor<float>({4, 4, 3}, 11);
    CHECK(allclose(rot90(t, 0), t, 0.0, 0.0));
    CHECK(allclose(rot90(t, 4), t, 0.0, 0.0));
    CHECK(allclose(rot90(t, -4), t, 0.0, 0.0));
}

TEST_CASE("rot90 2x2 against the index-mapping oracle") {
    Tensor t(Shape{2, 2}, std::vector<float>{1, 2, 3, 4});
    const Tensor expect = oracle::rot90_once_by_indices(t);
    CHECK(allclose(rot90(t, 1), expect, 0.0, 0.0));
    // [[1,2],[3,4]] rotated CCW once is [[2,4],[1,3]]
    CHECK(rot90(t, 1).at({0, 0}) == 2.0f);
    CHECK(rot90(t, 1).at({0, 1}) == 4.0f);
    CHECK(rot90(t, 1).at({1, 0}) == 1.0f);
    CHECK(rot90(t, 1).at({1, 1}) == 3.0f);
}

TEST_CASE("rot90 composition properties") {
    auto t = oracle::random_tensor<double>({6, 6, 2, 3}, 7);
    // four rotations compose to the identity, exactly
    auto r = rot90(rot90(rot90(rot90(t, 1), 1), 1), 1);
    CHECK(allclose(r, t, 0.0, 0.0));
    // rot90(.,1) then rot90(.,3) is the identity
    CHECK(allclose(rot90(rot90(t, 1), 3), t, 0.0, 0.0));
    // negative k is the inverse
    CHECK(allclose(rot90(rot90(t, 2), -2), t, 0.0, 0.0));
}

TEST_CASE("rot90 carries trailing axes unchanged on non-square grids") {
    auto t = oracle::random_tensor<float>({2, 5, 3}, 13);
    auto got = rot90(t, 1);
    CHECK(got.dim(0) == 5);
    CHECK(got.dim(1) == 2);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t c = 0; c < 3; ++c)
                CHECK(got.at({i, j, c}) == t.at({j, 5 - 1 - i, c}));
}

TEST_CASE("tensor file format round trip") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "rskt_tensor_io_test";
    fs::create_directories(dir);
    const auto path = (dir / "t.rskt").string();

    auto t = oracle::random_tensor<float>({3, 4, 5}, 21);
    save_tensor(t, path);
    const Tensor back = load_tensor(path);
    CHECK(back.shape() == t.shape());
    CHECK(allclose(back, t, 0.0, 0.0));

    SUBCASE("double saves through float32 payload") {
        auto d = oracle::random_tensor<double>({2, 2}, 22);
        save_tensor(d, path);
        const TensorD back_d = load_tensor_as<double>(path);
        CHECK(back_d.shape() == d.shape());
        CHECK(allclose(back_d, d, 1e-7, 1e-6)); // f32 quantization
    }

    SUBCASE("bad magic rejected") {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("NOPE", f);
        std::fclose(f);
        CHECK_THROWS_AS(load_tensor(path), IoError);
    }

    SUBCASE("missing file rejected") {
        CHECK_THROWS_AS(load_tensor((dir / "absent.rskt").string()), IoError);
    }
}

TEST_CASE("finiteness detection") {
    Tensor t(Shape{2, 2}, 1.0f);
    CHECK(t.all_finite());
    t[3] = std::numeric_limits<float>::infinity();
    CHECK_FALSE(t.all_finite());
    CHECK_THROWS_AS(check_finite(t, "test tensor"), NumericError);
}

TEST_SUITE_END();
