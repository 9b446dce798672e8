import numpy as np
import pytest

from rsrdiff.schedule import ScheduleConfig, build_schedule


@pytest.fixture(scope="session")
def schedule():
    return build_schedule(ScheduleConfig())


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


# Brute-force metric oracles: straightforward per-pixel reimplementations kept
# independent of the library's vectorized/convolution-based code paths.  Used
# by both the unit tests and the acceptance suite.


def gaussian_window_reference(size=11, sigma=1.5):
    half = (size - 1) / 2.0
    win = np.empty((size, size))
    for i in range(size):
        for j in range(size):
            win[i, j] = np.exp(-((i - half) ** 2 + (j - half) ** 2) / (2.0 * sigma**2))
    return win / win.sum()


def ssim_reference(a, b, data_range=1.0):
    """Windowed SSIM by explicit loops over valid positions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    win = gaussian_window_reference()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            pa = a[i : i + 11, j : j + 11]
            pb = b[i : i + 11, j : j + 11]
            mu1 = (win * pa).sum()
            mu2 = (win * pb).sum()
            v1 = (win * pa * pa).sum() - mu1 * mu1
            v2 = (win * pb * pb).sum() - mu2 * mu2
            cov = (win * pa * pb).sum() - mu1 * mu2
            vals.append(
                ((2 * mu1 * mu2 + c1) * (2 * cov + c2))
                / ((mu1**2 + mu2**2 + c1) * (v1 + v2 + c2))
            )
    return float(np.mean(vals))


def gmsd_reference(a, b, data_range=1.0):
    """GMSD by explicit per-pixel true convolution, symmetric borders."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    kx = np.array([[1.0, 0.0, -1.0]] * 3) / 3.0
    ky = kx.T

    def conv_at(img, kern, i, j):
        # true convolution: kernel flipped in both axes
        acc = 0.0
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ii, jj = i - di, j - dj
                if ii < 0:
                    ii = -ii - 1
                elif ii >= img.shape[0]:
                    ii = 2 * img.shape[0] - ii - 1
                if jj < 0:
                    jj = -jj - 1
                elif jj >= img.shape[1]:
                    jj = 2 * img.shape[1] - jj - 1
                acc += img[ii, jj] * kern[di + 1, dj + 1]
        return acc

    def magnitude(img):
        m = np.empty_like(img)
        for i in range(img.shape[0]):
            for j in range(img.shape[1]):
                gx = conv_at(img, kx, i, j)
                gy = conv_at(img, ky, i, j)
                m[i, j] = np.sqrt(gx * gx + gy * gy)
        return m

    c = 170.0 * (data_range / 255.0) ** 2
    mp = magnitude(a)
    mg = magnitude(b)
    s = (2.0 * mp * mg + c) / (mp * mp + mg * mg + c)
    mean = s.sum() / s.size
    return float(np.sqrt(((s - mean) ** 2).sum() / s.size))
