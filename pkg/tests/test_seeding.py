import numpy as np

from crtxnn.seeding import rng, sub_seed


class TestSubSeed:

    def test_is_stable_for_the_same_path(self):
        assert sub_seed(7, "init", "1->1", 0, 2) == sub_seed(7, "init", "1->1", 0, 2)

    def test_differs_between_names_and_seeds(self):
        seeds = {sub_seed(0, "init"), sub_seed(0, "shuffle"), sub_seed(1, "init"), sub_seed(0, "init", 1)}
        assert len(seeds) == 4

    def test_fits_in_32_bits(self):
        assert 0 <= sub_seed(123456789, "kmeans") < 2 ** 32


def test_generators_with_the_same_path_draw_the_same_numbers():
    np.testing.assert_array_equal(rng(3, "mix").random(5), rng(3, "mix").random(5))
