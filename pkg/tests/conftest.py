import numpy as np
import pytest

from ctxda import charlm

SWDA_HEADER = ("swda_filename,ptb_basename,conversation_no,transcript_index,"
               "act_tag,caller,utterance_index,subutterance_index,text")

CONV_A_ROWS = [
    'sw00utt/sw_0001_2005.utt,0001,2005,0,qw,A,1,1,"What about it? /"',
    'sw00utt/sw_0001_2005.utt,0001,2005,1,sd,B,2,1,"{D Well, } it is about twelve foot. /"',
    'sw00utt/sw_0001_2005.utt,0001,2005,2,b,A,3,1,"Uh-huh. /"',
    'sw00utt/sw_0001_2005.utt,0001,2005,3,sv,B,4,1,"I think it is <laughter> interesting. /"',
    'sw00utt/sw_0001_2005.utt,0001,2005,4,qy,A,5,1,"You never think about that do you? /"',
    'sw00utt/sw_0001_2005.utt,0001,2005,5,ny,B,6,1,"Yeah. /"',
]

CONV_B_ROWS = [
    'sw00utt/sw_0002_3011.utt,0002,3011,0,sd,A,1,1,"We bought a new car. /"',
    'sw00utt/sw_0002_3011.utt,0002,3011,1,qy^d,B,2,1,"A new one? /"',
    'sw00utt/sw_0002_3011.utt,0002,3011,2,ny,A,3,1,"Yes. /"',
    'sw00utt/sw_0002_3011.utt,0002,3011,3,+,A,4,1,"-- a blue one. /"',
]


@pytest.fixture
def swda_fixture_dir(tmp_path):
    """Two-conversation transcript tree in the public release column layout."""
    root = tmp_path / "swda"
    sub = root / "sw00utt"
    sub.mkdir(parents=True)
    (sub / "sw_0001_2005.utt.csv").write_text(
        SWDA_HEADER + "\n" + "\n".join(CONV_A_ROWS) + "\n", encoding="utf-8")
    (sub / "sw_0002_3011.utt.csv").write_text(
        SWDA_HEADER + "\n" + "\n".join(CONV_B_ROWS) + "\n", encoding="utf-8")
    return root


@pytest.fixture(scope="session")
def tiny_lm():
    """Small trained-ish language model params (random init, deterministic)."""
    return charlm.init_char_lm(16, 8, seed=12345)


def make_scalar_lm(weight: float = 1.0, out_weight: float = 0.0) -> charlm.CharLMParams:
    """d_lm=1, e=1 model with every weight set to `weight`, biases zero."""
    one = np.full((1, 1), weight, dtype=np.float64)
    return charlm.CharLMParams(
        embed=np.ones((256, 1), dtype=np.float64),
        w_mx=one.copy(), w_mh=one.copy(),
        w_ix=one.copy(), w_im=one.copy(), b_i=np.zeros(1),
        w_fx=one.copy(), w_fm=one.copy(), b_f=np.zeros(1),
        w_ox=one.copy(), w_om=one.copy(), b_o=np.zeros(1),
        w_cx=one.copy(), w_cm=one.copy(), b_c=np.zeros(1),
        w_out=np.full((256, 1), out_weight, dtype=np.float64),
    )
