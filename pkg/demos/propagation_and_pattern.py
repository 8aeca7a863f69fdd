"""Walk through the radio building blocks: path loss and the antenna pattern.

Run as a script to print small tables you can sanity-check against any
link-budget calculator. Nothing here touches the learning stack.
"""

import numpy as np

from tiltopt.simulator import antenna_gain_db, path_loss_db


def show_path_loss():
    print("COST-231 Hata urban path loss, f=2100 MHz, h_bs=32 m, h_ue=1.5 m")
    print(f"{'distance':>10}  {'loss dB':>9}")
    for d in (50, 100, 300, 500, 1000, 2000, 5000):
        print(f"{d:>8} m  {path_loss_db(d, 2100.0, 32.0, 1.5):9.2f}")
    slope = path_loss_db(2000, 2100.0, 32.0, 1.5) - path_loss_db(1000, 2100.0, 32.0, 1.5)
    print(f"doubling distance adds {slope:.2f} dB (35.5 dB/decade regime)\n")


def show_horizontal_cut():
    print("horizontal pattern cut (on-tilt), 65 degree 3 dB beamwidth")
    for phi in (0, 20, 32.5, 65, 120, 180):
        g = antenna_gain_db(phi, 0.0)
        print(f"  {phi:6.1f} deg off azimuth -> {g:6.2f} dB")
    print()


def show_vertical_cut():
    print("vertical pattern cut (on-azimuth), 10 degree beamwidth, tilt 6 deg")
    print("depression angle sweep as seen from a 32 m mast:")
    for depression in (0.0, 2.0, 6.0, 10.0, 16.0, 30.0):
        g = antenna_gain_db(0.0, depression - 6.0)
        print(f"  {depression:5.1f} deg depression -> {g:6.2f} dB")
    print()


def show_tilt_tradeoff():
    # received power at two ranges while the tilt sweeps: the crossover is
    # the whole point of the optimization problem
    print("rx power vs tilt for a near (150 m) and a far (900 m) user, dBm")
    print(f"{'tilt':>4}  {'near':>8}  {'far':>8}")
    for tilt in range(0, 16, 3):
        row = []
        for d in (150.0, 900.0):
            depr = np.degrees(np.arctan2(32.0 - 1.5, d))
            rx = 46.0 + antenna_gain_db(0.0, depr - tilt) - path_loss_db(d, 2100.0, 32.0, 1.5)
            row.append(rx)
        print(f"{tilt:>4}  {row[0]:8.2f}  {row[1]:8.2f}")


if __name__ == "__main__":
    show_path_loss()
    show_horizontal_cut()
    show_vertical_cut()
    show_tilt_tradeoff()
