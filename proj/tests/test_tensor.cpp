#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace dbp;

TEST(InnerProduct, Examples) {
  EXPECT_EQ(inner_product(Tensor::vector({1, 0}), Tensor::vector({0, 1})), 0.0);
  EXPECT_EQ(inner_product(Tensor::vector({3, -2}), Tensor::vector({3, -2})), 13.0);
  EXPECT_EQ(inner_product(Tensor({2, 3}), Tensor::filled({2, 3}, 7.5)), 0.0);
}

TEST(InnerProduct, ShapeMismatchNamesBothShapes) {
  try {
    (void)inner_product(Tensor({2}), Tensor({3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3]"), std::string::npos) << msg;
  }
  EXPECT_THROW((void)inner_product(Tensor({2, 3}), Tensor({3, 2})), ShapeError);
}

TEST(Hadamard, Examples) {
  EXPECT_EQ(hadamard(Tensor::vector({1, 2}), Tensor::vector({1, 1})), Tensor::vector({1, 2}));
  EXPECT_EQ(hadamard(Tensor::vector({2, 3}), Tensor::vector({4, 5})), Tensor::vector({8, 15}));
  EXPECT_EQ(hadamard(Tensor::vector({1, -1}), Tensor::vector({0, 0})), Tensor::vector({0, 0}));
  EXPECT_THROW((void)hadamard(Tensor({2}), Tensor({1, 2})), ShapeError);
}

TEST(HadamardDiv, Examples) {
  EXPECT_EQ(hadamard_div(Tensor::vector({1, 1}), Tensor::vector({1, 1})), Tensor::vector({1, 1}));
  EXPECT_EQ(hadamard_div(Tensor::vector({1, 0}), Tensor::vector({0.5, 0.25})),
            Tensor::vector({2, 0}));
}

TEST(HadamardDiv, ZeroDivisorNamesIndex) {
  try {
    (void)hadamard_div(Tensor::vector({1, 2, 3}), Tensor::vector({1, 0, 1}));
    FAIL() << "expected DomainError";
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
  }
}

TEST(Tensor, ConstructionValidates) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor({0}), ShapeError);
  EXPECT_THROW(Tensor(Shape{}), ShapeError);
  EXPECT_THROW(Tensor({1}, {std::numeric_limits<double>::quiet_NaN()}), DomainError);
  EXPECT_THROW(Tensor({1}, {std::numeric_limits<double>::infinity()}), DomainError);
  const Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_TRUE(t.is_zero());
}

TEST(Tensor, ReshapeKeepsData) {
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  const Tensor v = m.reshaped({6});
  EXPECT_EQ(v.values(), m.values());
  EXPECT_EQ(m(1, 0), 4.0);
  EXPECT_THROW((void)m.reshaped({5}), ShapeError);
}

TEST(Tensor, JsonRoundTrip) {
  Rng rng(5);
  const Tensor t = fixtures::random_tensor(rng, {3, 2, 2});
  const nlohmann::json j = t;
  EXPECT_EQ(j.at("shape"), nlohmann::json({3, 2, 2}));
  EXPECT_EQ(j.at("data").size(), 12u);
  const Tensor back = nlohmann::json::parse(j.dump()).get<Tensor>();
  EXPECT_EQ(back, t);
}

TEST(Tensor, JsonRejectsBadLength) {
  const auto j = nlohmann::json::parse(R"({"shape":[2,2],"data":[1,2,3]})");
  EXPECT_THROW((void)j.get<Tensor>(), ShapeError);
}

TEST(TensorProperties, InnerProductSymmetricAndLinear) {
  Rng rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const Shape s = {1 + rng.below(4), 1 + rng.below(5)};
    const Tensor a = fixtures::random_tensor(rng, s);
    const Tensor b = fixtures::random_tensor(rng, s);
    const Tensor c = fixtures::random_tensor(rng, s);
    EXPECT_EQ(inner_product(a, b), inner_product(b, a));
    const double lhs = inner_product(a + c, b) - inner_product(a, b) - inner_product(c, b);
    EXPECT_LE(std::abs(lhs), 1e-12 * (a.norm() + c.norm()) * b.norm());
  }
}

TEST(TensorProperties, SquaredNormIsSelfInnerProduct) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor a = fixtures::random_tensor(rng, {1 + rng.below(8)});
    EXPECT_DOUBLE_EQ(a.squared_norm(), inner_product(a, a));
    EXPECT_GT(a.squared_norm(), 0.0);
  }
  EXPECT_EQ(Tensor({4}).squared_norm(), 0.0);
}
