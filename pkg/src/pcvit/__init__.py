from pcvit._backend import BACKEND
